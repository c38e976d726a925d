import sys

from bosequench.cli import main

sys.exit(main())
