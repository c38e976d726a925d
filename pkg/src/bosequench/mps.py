"""Matrix-product states with open boundaries.

Site tensors are indexed (left bond, physical, right bond). A state may carry
U(1) labels on its bonds: ``charges[k]`` gives, for each index of bond k
(between sites k-1 and k), the number of particles to the left of that bond.
When labels are present all factorizations are done block by block in the
particle number, which keeps the tensors exactly number conserving and makes
the SVDs much cheaper. Dense storage is kept either way.

Truncation policy: keep at most ``chi_max`` singular values and drop the
smallest ones while their summed relative weight stays below ``svd_cutoff``;
the kept values are rescaled to unit norm and the dropped weight is added to
``trunc_error_acc``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.linalg.lapack

from bosequench.errors import ConfigError, InvariantViolation, ResourceLimit

try:
    from bosequench import _kernels
except ImportError:  # numba missing: interpreted sector update only
    _kernels = None

DEFAULT_SVD_CUTOFF = 1e-10
# singular values below this fraction of the largest are numerical zeros
_ZERO_SV = 1e-15
DENSE_CAP = 2**24


@dataclass
class GateReport:
    discarded_weight: float
    new_bond_dim: int


class MpsState:
    """Finite MPS.

    Parameters
    ----------
    tensors : list of complex arrays of shape (chi_left, d, chi_right)
    chi_max : bond-dimension cap applied by gate updates
    svd_cutoff : relative discarded-weight threshold per SVD
    charges : optional list of ``L + 1`` integer arrays labelling bond indices
    ortho_center : site holding the norm when the state is in mixed canonical form

    ``schmidt`` is either None or a list of ``L + 1`` arrays of Schmidt values,
    one per bond. It is only set while every tensor is a right isometry (see
    ``to_schmidt_form``); any other gauge change clears it.
    """

    def __init__(self, tensors, chi_max=64, svd_cutoff=DEFAULT_SVD_CUTOFF, charges=None,
                 ortho_center=None, trunc_error_acc=0.0):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        self.chi_max = int(chi_max)
        self.svd_cutoff = float(svd_cutoff)
        self.charges = None if charges is None else [np.asarray(q, dtype=np.int64) for q in charges]
        self.ortho_center = ortho_center
        self.trunc_error_acc = float(trunc_error_acc)
        self.schmidt = None
        self._check_structure()

    def _check_structure(self):
        ts = self.tensors
        if not ts:
            raise ConfigError("empty MPS")
        if ts[0].shape[0] != 1 or ts[-1].shape[2] != 1:
            raise ConfigError("boundary bonds must have dimension 1")
        for k in range(len(ts) - 1):
            if ts[k].shape[2] != ts[k + 1].shape[0]:
                raise ConfigError(f"bond {k + 1} dimension mismatch")
        if self.charges is not None:
            if len(self.charges) != len(ts) + 1:
                raise ConfigError("need L+1 charge arrays")
            for k, t in enumerate(ts):
                if len(self.charges[k]) != t.shape[0]:
                    raise ConfigError(f"charge labels of bond {k} do not match tensor")

    @property
    def L(self) -> int:
        return len(self.tensors)

    @property
    def phys_dims(self) -> list:
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list:
        """Dimensions of the L-1 internal bonds."""
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond_dim(self) -> int:
        return max(self.bond_dims, default=1)

    def copy(self) -> "MpsState":
        # arrays are never modified in place, so sharing them is safe
        st = MpsState.__new__(MpsState)
        st.tensors = list(self.tensors)
        st.chi_max = self.chi_max
        st.svd_cutoff = self.svd_cutoff
        st.charges = None if self.charges is None else list(self.charges)
        st.ortho_center = self.ortho_center
        st.trunc_error_acc = self.trunc_error_acc
        st.schmidt = None if self.schmidt is None else list(self.schmidt)
        return st

    def norm(self) -> float:
        if self.ortho_center is not None:
            return float(np.linalg.norm(self.tensors[self.ortho_center]))
        return float(np.sqrt(abs(overlap(self, self))))

    def normalize(self):
        """Rescale to unit norm (in place)."""
        c = self.ortho_center if self.ortho_center is not None else 0
        nrm = self.norm()
        if nrm == 0:
            raise InvariantViolation("cannot normalize the zero state")
        self.tensors[c] = self.tensors[c] / nrm
        return self

    def particle_number(self) -> Optional[int]:
        """Total particle number fixed by the bond labels, or None."""
        if self.charges is None:
            return None
        return int(self.charges[-1][0])


# ---------------------------------------------------------------------------
# construction


def product_state(occupations: Sequence[int], d, chi_max=64, svd_cutoff=DEFAULT_SVD_CUTOFF,
                  conserve=True) -> MpsState:
    """Fock product state |n_0 n_1 ...> with physical dimension ``d`` per site."""
    L = len(occupations)
    ds = [d] * L if np.isscalar(d) else list(d)
    tensors = []
    for n, dj in zip(occupations, ds):
        if not 0 <= n < dj:
            raise ConfigError(f"occupation {n} outside [0, {dj})")
        t = np.zeros((1, dj, 1), dtype=complex)
        t[0, n, 0] = 1.0
        tensors.append(t)
    charges = None
    if conserve:
        cum = np.concatenate([[0], np.cumsum(occupations)])
        charges = [np.array([c]) for c in cum]
    return MpsState(tensors, chi_max=chi_max, svd_cutoff=svd_cutoff, charges=charges,
                    ortho_center=0)


def random_mps(L, d, chi, rng=None, chi_max=None, svd_cutoff=DEFAULT_SVD_CUTOFF,
               normalize=True) -> MpsState:
    """Random complex MPS without particle-number labels."""
    rng = np.random.default_rng(rng)
    dims = [1]
    for k in range(1, L):
        dims.append(int(min(chi, d**k, d ** (L - k))))
    dims.append(1)
    tensors = []
    for k in range(L):
        shape = (dims[k], d, dims[k + 1])
        tensors.append(rng.normal(size=shape) + 1j * rng.normal(size=shape))
    st = MpsState(tensors, chi_max=chi_max or max(chi, 1), svd_cutoff=svd_cutoff)
    if normalize:
        canonicalize(st, 0, inplace=True)
        st.normalize()
    return st


# ---------------------------------------------------------------------------
# block factorizations


def _group(q):
    """Map charge -> index array (indices in ascending order)."""
    order = np.argsort(q, kind="stable")
    qs = q[order]
    bounds = [0, *(np.flatnonzero(qs[1:] != qs[:-1]) + 1).tolist(), len(q)]
    return {int(qs[s]): order[s:e] for s, e in zip(bounds[:-1], bounds[1:])}


def _row_charges(ql, d):
    return (ql[:, None] + np.arange(d)[None, :]).ravel()


def _col_charges(qr, d):
    return (qr[None, :] - np.arange(d)[:, None]).ravel()


_gesdd = scipy.linalg.lapack.zgesdd


def _svd(m):
    u, s, vh, info = _gesdd(m, compute_uv=1, full_matrices=0)
    if info == 0:
        return u, s, vh
    return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def block_qr(M, rowq, colq):
    """QR factorization respecting charge blocks: M = Q @ R.

    Returns Q (rows x k), R (k x cols) and the charges of the new k indices,
    sorted ascending.
    """
    rows = _group(rowq)
    cols = _group(colq)
    pieces = []
    k = 0
    for c in sorted(cols):
        r_idx = rows.get(c)
        if r_idx is None:
            continue
        c_idx = cols[c]
        q, r = np.linalg.qr(M[r_idx[:, None], c_idx])
        # non-negative diagonal of R makes the factorization unique
        ph = np.diagonal(r).copy()
        ph = np.where(np.abs(ph) > 0, ph / np.where(np.abs(ph) > 0, np.abs(ph), 1), 1)
        q = q * ph[None, :]
        r = r * ph.conj()[:, None]
        pieces.append((c, r_idx, c_idx, q, r, k))
        k += q.shape[1]
    k = max(k, 1)
    Q = np.zeros((M.shape[0], k), dtype=M.dtype)
    R = np.zeros((k, M.shape[1]), dtype=M.dtype)
    newq = np.zeros(k, dtype=np.int64)
    for c, r_idx, c_idx, q, r, off in pieces:
        kc = q.shape[1]
        Q[r_idx, off:off + kc] = q
        R[off:off + kc][:, c_idx] = r
        newq[off:off + kc] = c
    if not pieces:
        # zero matrix; keep a single dead index
        newq[0] = int(colq[0]) if len(colq) else 0
    return Q, R, newq


def _n_keep(s_sorted, total, chi_max, cutoff):
    n = len(s_sorted)
    if n == 0:
        return 0
    nonzero = int(np.count_nonzero(s_sorted > _ZERO_SV * s_sorted[0]))
    keep = max(nonzero, 1)
    if cutoff > 0 and total > 0:
        w = s_sorted**2 / total
        tail = np.cumsum(w[::-1])[::-1]  # tail[i] = weight of values i..n-1
        ok = np.nonzero(tail <= cutoff)[0]
        if len(ok):
            keep = min(keep, max(int(ok[0]), 1))
    return min(keep, chi_max)


def block_svd(M, rowq, colq, chi_max, cutoff):
    """Truncated SVD respecting charge blocks.

    Returns ``U, S, Vh, newq, discarded`` where S holds the kept singular
    values *before* renormalization, grouped by ascending charge and
    descending within each charge, and ``discarded`` is the relative weight
    of the dropped values.
    """
    rows = _group(rowq)
    cols = _group(colq)
    blocks = []
    for c in sorted(rows):
        c_idx = cols.get(c)
        if c_idx is None:
            continue
        r_idx = rows[c]
        u, s, vh = _svd(M[r_idx[:, None], c_idx])
        blocks.append((c, r_idx, c_idx, u, s, vh))
    if not blocks:
        raise InvariantViolation("two-site tensor has no allowed charge block")
    s_all = np.concatenate([b[4] for b in blocks])
    sector = np.repeat(np.arange(len(blocks)), [len(b[4]) for b in blocks])
    order = np.argsort(-s_all, kind="stable")
    s_sorted = s_all[order]
    w = s_sorted**2
    total = float(w.sum())
    keep = _n_keep(s_sorted, total, chi_max, cutoff)
    counts = np.bincount(sector[order[:keep]], minlength=len(blocks))
    discarded = max(0.0, float(w[keep:].sum()) / total) if total > 0 else 0.0

    U = np.zeros((M.shape[0], keep), dtype=M.dtype)
    Vh = np.zeros((keep, M.shape[1]), dtype=M.dtype)
    S = np.zeros(keep)
    newq = np.zeros(keep, dtype=np.int64)
    off = 0
    for (c, r_idx, c_idx, u, s, vh), kc in zip(blocks, counts):
        if kc == 0:
            continue
        U[r_idx, off:off + kc] = u[:, :kc]
        Vh[off:off + kc][:, c_idx] = vh[:kc]
        S[off:off + kc] = s[:kc]
        newq[off:off + kc] = c
        off += kc
    return U, S, Vh, newq, discarded


# ---------------------------------------------------------------------------
# gauge moves


def _shift_right(state, c):
    """Move the orthogonality centre from site c to c + 1."""
    state.schmidt = None
    A = state.tensors[c]
    chl, d, chr_ = A.shape
    if state.charges is None:
        Q, R = np.linalg.qr(A.reshape(chl * d, chr_))
        newq = None
    else:
        Q, R, newq = block_qr(A.reshape(chl * d, chr_), _row_charges(state.charges[c], d),
                              state.charges[c + 1])
    state.tensors[c] = Q.reshape(chl, d, Q.shape[1])
    state.tensors[c + 1] = np.tensordot(R, state.tensors[c + 1], axes=(1, 0))
    if newq is not None:
        state.charges[c + 1] = newq


def _shift_left(state, c):
    """Move the orthogonality centre from site c to c - 1."""
    state.schmidt = None
    B = state.tensors[c]
    chl, d, chr_ = B.shape
    Mh = B.reshape(chl, d * chr_).conj().T
    if state.charges is None:
        Q, R = np.linalg.qr(Mh)
        newq = None
    else:
        Q, R, newq = block_qr(Mh, _col_charges(state.charges[c + 1], d), state.charges[c])
    k = Q.shape[1]
    state.tensors[c] = Q.conj().T.reshape(k, d, chr_)
    state.tensors[c - 1] = np.tensordot(state.tensors[c - 1], R.conj().T, axes=(2, 0))
    if newq is not None:
        state.charges[c] = newq


def move_center(state: MpsState, target: int):
    """Shift an existing orthogonality centre to ``target`` (in place)."""
    c = state.ortho_center
    if c is None:
        raise InvariantViolation("state has no orthogonality centre")
    while c < target:
        _shift_right(state, c)
        c += 1
    while c > target:
        _shift_left(state, c)
        c -= 1
    state.ortho_center = target
    return state


def canonicalize(state: MpsState, center: int, inplace: bool = False) -> MpsState:
    """Bring the state into mixed canonical form around ``center``.

    Tensors left of the centre become left isometries and those right of it
    right isometries. The norm ends up in the centre tensor.
    """
    st = state if inplace else state.copy()
    if not 0 <= center < st.L:
        raise ConfigError(f"centre {center} outside chain of length {st.L}")
    if st.ortho_center is None:
        for c in range(center):
            _shift_right(st, c)
        for c in range(st.L - 1, center, -1):
            _shift_left(st, c)
        st.ortho_center = center
    else:
        move_center(st, center)
    return st


# ---------------------------------------------------------------------------
# gates


def is_number_conserving(gate, d1, d2, tol=1e-12) -> bool:
    n = (np.arange(d1)[:, None] + np.arange(d2)[None, :]).ravel()
    mask = n[:, None] != n[None, :]
    return bool(np.all(np.abs(gate[mask]) <= tol))


def apply_two_site_gate(state: MpsState, bond: int, gate, move: str = "right",
                        check: bool = True) -> GateReport:
    """Apply ``gate`` to sites (bond, bond + 1) and re-split by truncated SVD.

    The orthogonality centre must already sit on one of the two sites. After
    the update it sits on the right site (``move='right'``, the default) or
    the left one (``move='left'``), and the state has unit norm.
    """
    if state.ortho_center not in (bond, bond + 1):
        raise InvariantViolation(
            f"orthogonality centre {state.ortho_center} is not on bond {bond}")
    A, B = state.tensors[bond], state.tensors[bond + 1]
    chl, d1, _ = A.shape
    _, d2, chr_ = B.shape
    gate = np.asarray(gate)
    if gate.shape != (d1 * d2, d1 * d2):
        raise ConfigError(f"gate shape {gate.shape} does not match ({d1 * d2}, {d1 * d2})")
    if check:
        err = np.max(np.abs(gate.conj().T @ gate - np.eye(d1 * d2)))
        if err > 1e-10:
            raise ConfigError(f"gate is not unitary (deviation {err:.2e})")
        if state.charges is not None and not is_number_conserving(gate, d1, d2):
            state.charges = None

    theta = np.tensordot(A, B, axes=(2, 0)).reshape(chl, d1 * d2, chr_)
    theta = np.tensordot(gate, theta, axes=(1, 1)).transpose(1, 0, 2)
    M = theta.reshape(chl * d1, d2 * chr_)
    if state.charges is None:
        rowq = np.zeros(chl * d1, dtype=np.int64)
        colq = np.zeros(d2 * chr_, dtype=np.int64)
    else:
        rowq = _row_charges(state.charges[bond], d1)
        colq = _col_charges(state.charges[bond + 2], d2)
    U, S, Vh, newq, discarded = block_svd(M, rowq, colq, state.chi_max, state.svd_cutoff)
    S = S / np.linalg.norm(S)
    k = len(S)
    if move == "right":
        state.tensors[bond] = U.reshape(chl, d1, k)
        state.tensors[bond + 1] = (S[:, None] * Vh).reshape(k, d2, chr_)
        state.ortho_center = bond + 1
    elif move == "left":
        state.tensors[bond] = (U * S[None, :]).reshape(chl, d1, k)
        state.tensors[bond + 1] = Vh.reshape(k, d2, chr_)
        state.ortho_center = bond
    else:
        raise ConfigError(f"move must be 'left' or 'right', not {move!r}")
    if state.charges is not None:
        state.charges[bond + 1] = newq
    state.schmidt = None
    state.trunc_error_acc += discarded
    return GateReport(discarded_weight=discarded, new_bond_dim=k)


def _bond_charges(state, bond, d1, d2, chl, chr_):
    if state.charges is None:
        return np.zeros(chl * d1, dtype=np.int64), np.zeros(d2 * chr_, dtype=np.int64)
    return _row_charges(state.charges[bond], d1), _col_charges(state.charges[bond + 2], d2)


def to_schmidt_form(state: MpsState) -> MpsState:
    """Make every tensor a right isometry and record the Schmidt values (in place).

    The state is normalized. Afterwards the centre is on site 0 and
    ``state.schmidt[k]`` holds the singular values across bond k.
    """
    L = state.L
    canonicalize(state, L - 1, inplace=True)
    state.normalize()
    lam = [None] * (L + 1)
    lam[0] = lam[L] = np.ones(1)
    for c in range(L - 1, 0, -1):
        T = state.tensors[c]
        chl, d, chr_ = T.shape
        if state.charges is None:
            rowq = np.zeros(chl, dtype=np.int64)
            colq = np.zeros(d * chr_, dtype=np.int64)
        else:
            rowq = state.charges[c]
            colq = _col_charges(state.charges[c + 1], d)
        U, S, Vh, newq, _ = block_svd(T.reshape(chl, d * chr_), rowq, colq, max(chl, 1), 0.0)
        k = len(S)
        state.tensors[c] = Vh.reshape(k, d, chr_)
        state.tensors[c - 1] = np.tensordot(state.tensors[c - 1], U * S[None, :], axes=(2, 0))
        if state.charges is not None:
            state.charges[c] = newq
        lam[c] = S / np.linalg.norm(S)
    state.tensors[0] = state.tensors[0] / np.linalg.norm(state.tensors[0])
    state.ortho_center = 0
    state.schmidt = lam
    return state


def apply_gate_schmidt(state: MpsState, bond: int, gate) -> GateReport:
    """Gate update for states in Schmidt form, without moving any centre.

    Both tensors stay right isometries: the new right tensor is the right
    singular basis, and the new left tensor is the updated two-site tensor
    projected onto it. No Schmidt values are inverted. Gates on bonds that
    share no site touch disjoint data. With charge labels the update runs
    sector by sector and the gate must conserve particle number.
    """
    if state.schmidt is None:
        raise InvariantViolation("state is not in Schmidt form")
    q = state.charges
    # Schmidt form is only ever produced with ascending bond charges
    if q is not None:
        if _kernels is not None:
            try:
                return _compiled_update(state, bond, gate)
            except (ValueError, np.linalg.LinAlgError):
                pass  # the interpreted path below raises the proper error or uses gesvd
        return _sector_update(state, bond, gate)
    A, B = state.tensors[bond], state.tensors[bond + 1]
    chl, d1, _ = A.shape
    _, d2, chr_ = B.shape
    theta = np.tensordot(A, B, axes=(2, 0)).reshape(chl, d1 * d2, chr_)
    theta = np.matmul(gate, theta).reshape(chl * d1, d2 * chr_)
    lam = state.schmidt[bond]
    scaled = (lam[:, None] * theta.reshape(chl, d1 * d2 * chr_)).reshape(chl * d1, d2 * chr_)
    rowq, colq = _bond_charges(state, bond, d1, d2, chl, chr_)
    _, S, Vh, newq, discarded = block_svd(scaled, rowq, colq, state.chi_max, state.svd_cutoff)
    nrm = np.linalg.norm(S)
    k = len(S)
    state.tensors[bond] = (theta @ Vh.conj().T / nrm).reshape(chl, d1, k)
    state.tensors[bond + 1] = Vh.reshape(k, d2, chr_)
    state.schmidt[bond + 1] = S / nrm
    if state.charges is not None:
        state.charges[bond + 1] = newq
    state.trunc_error_acc += discarded
    return GateReport(discarded_weight=discarded, new_bond_dim=k)


def _slices(q):
    """charge -> contiguous slice, for sorted labels."""
    if len(q) == 0:
        return {}
    b = [0, *(np.flatnonzero(q[1:] != q[:-1]) + 1).tolist(), len(q)]
    return {int(q[s]): slice(s, e) for s, e in zip(b[:-1], b[1:])}


_GATE_BLOCKS: dict = {}


def _gate_blocks(gate, d1, d2):
    """Blocks of a number-conserving gate, keyed by total occupation.

    Entry for total n: (lowest n1, matrix over n1 = lowest..highest).
    """
    key = id(gate)
    hit = _GATE_BLOCKS.get(key)
    if hit is not None and hit[0] is gate:
        return hit[1]
    if len(_GATE_BLOCKS) > 512:
        _GATE_BLOCKS.clear()
    blocks = {}
    for tot in range(d1 + d2 - 1):
        lo, hi = max(0, tot - d2 + 1), min(d1 - 1, tot)
        idx = np.array([n1 * d2 + tot - n1 for n1 in range(lo, hi + 1)])
        blocks[tot] = (lo, np.ascontiguousarray(gate[idx[:, None], idx]))
    _GATE_BLOCKS[key] = (gate, blocks)
    return blocks


def _gate_arrays(gate, d1, d2):
    """Gate blocks padded into arrays: lowest n1, block size and matrices, per total."""
    key = ("arrays", id(gate))
    hit = _GATE_BLOCKS.get(key)
    if hit is not None and hit[0] is gate:
        return hit[1]
    blocks = _gate_blocks(gate, d1, d2)
    ntot = d1 + d2 - 1
    lo = np.zeros(ntot, dtype=np.int64)
    size = np.zeros(ntot, dtype=np.int64)
    mats = np.zeros((ntot, min(d1, d2), min(d1, d2)), dtype=complex)
    for tot, (l, G) in blocks.items():
        lo[tot] = l
        size[tot] = G.shape[0]
        mats[tot, :G.shape[0], :G.shape[0]] = G
    _GATE_BLOCKS[key] = (gate, (lo, size, mats))
    return lo, size, mats


def _compiled_update(state, bond, gate):
    A, B = state.tensors[bond], state.tensors[bond + 1]
    d1, d2 = A.shape[1], B.shape[1]
    lo, size, mats = _gate_arrays(gate, d1, d2)
    q = state.charges
    newA, newB, newS, newq, discarded = _kernels.sector_gate(
        np.ascontiguousarray(A, dtype=complex), np.ascontiguousarray(B, dtype=complex),
        np.asarray(state.schmidt[bond], dtype=float), np.asarray(q[bond], dtype=np.int64),
        np.asarray(q[bond + 1], dtype=np.int64), np.asarray(q[bond + 2], dtype=np.int64),
        lo, size, mats, int(state.chi_max), float(state.svd_cutoff), _ZERO_SV)
    state.tensors[bond] = newA
    state.tensors[bond + 1] = newB
    state.schmidt[bond + 1] = newS
    q[bond + 1] = newq
    state.trunc_error_acc += discarded
    return GateReport(discarded_weight=discarded, new_bond_dim=len(newS))


def _sector_update(state, bond, gate):
    A, B = state.tensors[bond], state.tensors[bond + 1]
    chl, d1, _ = A.shape
    _, d2, chr_ = B.shape
    lam = state.schmidt[bond]
    sl_l = _slices(state.charges[bond])
    sl_m = _slices(state.charges[bond + 1])
    sl_r = _slices(state.charges[bond + 2])
    gblocks = _gate_blocks(gate, d1, d2)

    # updated two-site pieces, keyed by (new middle charge, left charge, right charge)
    pieces = {}
    for al, sa in sl_l.items():
        for be, sb in sl_r.items():
            tot = be - al
            if not 0 <= tot <= d1 + d2 - 2:
                continue
            lo, G = gblocks[tot]
            nr = G.shape[0]
            T = None
            for i in range(nr):
                n1 = lo + i
                sm = sl_m.get(al + n1)
                if sm is None:
                    continue
                blk = A[sa, n1, sm] @ B[sm, tot - n1, sb]
                if T is None:
                    T = np.zeros((nr,) + blk.shape, dtype=complex)
                T[i] = blk
            if T is None:
                continue
            shape = T.shape
            T = (G @ T.reshape(nr, -1)).reshape(shape)
            for i in range(nr):
                pieces[(al + lo + i, al, be)] = T[i]

    # one SVD per new middle charge
    blocks = []
    for c in sorted({key[0] for key in pieces}):
        rows = [(al, sa) for al, sa in sl_l.items() if 0 <= c - al < d1]
        cols = [(be, sb) for be, sb in sl_r.items() if 0 <= be - c < d2]
        roff = np.cumsum([0] + [sa.stop - sa.start for _, sa in rows])
        coff = np.cumsum([0] + [sb.stop - sb.start for _, sb in cols])
        M = np.zeros((roff[-1], coff[-1]), dtype=complex)
        for i, (al, _) in enumerate(rows):
            for j, (be, _) in enumerate(cols):
                p = pieces.get((c, al, be))
                if p is not None:
                    M[roff[i]:roff[i + 1], coff[j]:coff[j + 1]] = p
        lam_rows = np.concatenate([lam[sa] for _, sa in rows])
        _, s, vh = _svd(lam_rows[:, None] * M)
        blocks.append((c, rows, cols, roff, coff, M, s, vh))
    if not blocks:
        raise InvariantViolation("two-site tensor has no allowed charge block")

    s_all = np.concatenate([b[6] for b in blocks])
    sector = np.repeat(np.arange(len(blocks)), [len(b[6]) for b in blocks])
    order = np.argsort(-s_all, kind="stable")
    w = s_all[order] ** 2
    total = float(w.sum())
    keep = _n_keep(s_all[order], total, state.chi_max, state.svd_cutoff)
    counts = np.bincount(sector[order[:keep]], minlength=len(blocks))
    discarded = max(0.0, float(w[keep:].sum()) / total) if total > 0 else 0.0
    nrm = float(np.sqrt(w[:keep].sum()))

    newA = np.zeros((chl, d1, keep), dtype=complex)
    newB = np.zeros((keep, d2, chr_), dtype=complex)
    newS = np.zeros(keep)
    newq = np.zeros(keep, dtype=np.int64)
    off = 0
    for (c, rows, cols, roff, coff, M, s, vh), kc in zip(blocks, counts):
        if kc == 0:
            continue
        ks = slice(off, off + kc)
        vk = vh[:kc]
        X = M @ vk.conj().T / nrm
        for i, (al, sa) in enumerate(rows):
            newA[sa, c - al, ks] = X[roff[i]:roff[i + 1]]
        for j, (be, sb) in enumerate(cols):
            newB[ks, be - c, sb] = vk[:, coff[j]:coff[j + 1]]
        newS[ks] = s[:kc] / nrm
        newq[ks] = c
        off += kc
    state.tensors[bond] = newA
    state.tensors[bond + 1] = newB
    state.schmidt[bond + 1] = newS
    state.charges[bond + 1] = newq
    state.trunc_error_acc += discarded
    return GateReport(discarded_weight=discarded, new_bond_dim=keep)


# ---------------------------------------------------------------------------
# contractions


def overlap(bra: MpsState, ket: MpsState) -> complex:
    """<bra|ket>."""
    if bra.L != ket.L:
        raise ConfigError("overlap of states with different lengths")
    E = np.ones((1, 1), dtype=complex)
    for a, b in zip(bra.tensors, ket.tensors):
        E = np.tensordot(E, b, axes=(1, 0))  # (bra_l, d, ket_r)
        E = np.tensordot(a.conj(), E, axes=([0, 1], [0, 1]))
    return complex(E[0, 0])


def to_dense(state: MpsState) -> np.ndarray:
    """Full state vector, site 0 as the most significant index."""
    size = int(np.prod(state.phys_dims, dtype=float))
    if size > DENSE_CAP:
        raise ResourceLimit(f"dense vector of size {size} exceeds cap {DENSE_CAP}")
    v = state.tensors[0][0]  # (d, chi)
    for t in state.tensors[1:]:
        v = np.tensordot(v, t, axes=(-1, 0))
        v = v.reshape(-1, t.shape[2])
    return v[:, 0].copy()


def _check_op(op, d):
    op = np.asarray(op)
    if op.shape != (d, d):
        raise ConfigError(f"operator shape {op.shape} does not match physical dimension {d}")
    return op


def _open_left(A, op):
    """E[b, c] = sum A*[a, n, b] op[n, m] A[a, m, c]."""
    return np.tensordot(A.conj(), np.tensordot(op, A, axes=(1, 1)), axes=([0, 1], [1, 0]))


def _close_right(E, T, op):
    """sum E[b, c] T*[b, n, d] op[n, m] T[c, m, d] for a right-isometric T."""
    X = np.tensordot(op, np.tensordot(E, T, axes=(1, 0)), axes=(1, 1))  # (n, b, d)
    return np.vdot(T.transpose(1, 0, 2), X)


def _transfer(E, T):
    return np.tensordot(T.conj(), np.tensordot(E, T, axes=(1, 0)), axes=([0, 1], [0, 1]))


def expectation_one_site(state: MpsState, site: int, op) -> complex:
    """<psi|op_site|psi> / <psi|psi>."""
    op = _check_op(op, state.phys_dims[site])
    st = canonicalize(state, site)
    A = st.tensors[site]
    val = np.vdot(A, np.tensordot(A, op, axes=(1, 1)).transpose(0, 2, 1))
    return complex(val / np.vdot(A, A))


def expectation_two_site(state: MpsState, i: int, j: int, op_i, op_j) -> complex:
    """<psi|op_i op_j|psi> / <psi|psi> for sites i < j."""
    if not i < j:
        raise ConfigError(f"two-site expectation needs i < j, got {i}, {j}")
    op_i = _check_op(op_i, state.phys_dims[i])
    op_j = _check_op(op_j, state.phys_dims[j])
    st = canonicalize(state, i)
    A = st.tensors[i]
    nrm2 = np.vdot(A, A)
    E = _open_left(A, op_i)
    for k in range(i + 1, j):
        E = _transfer(E, st.tensors[k])
    val = _close_right(E, st.tensors[j], op_j)
    return complex(val / nrm2)


def _centre_at(state, i):
    """(centre tensor at site i, tensors with right isometries beyond i)."""
    if state.schmidt is not None:
        return state.schmidt[i][:, None, None] * state.tensors[i], state.tensors
    st = canonicalize(state, i)
    return st.tensors[i], st.tensors


def correlation_row(state: MpsState, i: int, op_i, op_j, sites=None) -> np.ndarray:
    """<op_i op_j> for every j > i (or the listed ``sites``) in one sweep."""
    A, tensors = _centre_at(state, i)
    nrm2 = np.vdot(A, A).real
    E = _open_left(A, op_i)
    last = state.L - 1 if sites is None else max(sites)
    out = {}
    for k in range(i + 1, last + 1):
        T = tensors[k]
        out[k] = _close_right(E, T, op_j) / nrm2
        E = _transfer(E, T)
    wanted = range(i + 1, state.L) if sites is None else sites
    return np.array([out[k] for k in wanted])


def local_profile(state: MpsState, site_ops: dict, bond_ops: Optional[dict] = None):
    """Expectation values of one-site operators on every site and of
    nearest-neighbour products on every bond, in a single left-to-right sweep.

    ``site_ops`` maps names to (d, d) matrices; ``bond_ops`` maps names to
    pairs (X, Y) meaning X_j Y_{j+1}. Returns a dict of arrays. States in
    Schmidt form are read directly, without any gauge change.
    """
    bond_ops = bond_ops or {}
    L = state.L
    fast = state.schmidt is not None
    st = state if fast else canonicalize(state, 0)
    out = {k: np.zeros(L, dtype=complex) for k in site_ops}
    out.update({k: np.zeros(L - 1, dtype=complex) for k in bond_ops})
    for c in range(L):
        A = st.schmidt[c][:, None, None] * st.tensors[c] if fast else st.tensors[c]
        nrm2 = float(np.vdot(A, A).real)
        rho = np.tensordot(A.conj(), A, axes=([0, 2], [0, 2]))  # site density matrix, (bra, ket)
        for name, op in site_ops.items():
            out[name][c] = np.sum(rho * op) / nrm2
        if c < L - 1:
            B = st.tensors[c + 1]
            for name, (X, Y) in bond_ops.items():
                out[name][c] = _close_right(_open_left(A, X), B, Y) / nrm2
            if not fast:
                _shift_right(st, c)
                st.ortho_center = c + 1
    return out


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"BQMPS\x00\x00\x01"
_VERSION = 1


def save_checkpoint(state: MpsState, path) -> None:
    """Write a binary checkpoint; the layout is described in the README."""
    L = state.L
    parts = [_MAGIC, struct.pack("<II", _VERSION, L)]
    parts.append(struct.pack(f"<{L}I", *state.phys_dims))
    bonds = [1] + state.bond_dims + [1]
    parts.append(struct.pack(f"<{L + 1}I", *bonds))
    oc = -1 if state.ortho_center is None else int(state.ortho_center)
    parts.append(struct.pack("<idIdB", oc, state.trunc_error_acc, state.chi_max,
                             state.svd_cutoff, 0 if state.charges is None else 1))
    for t in state.tensors:
        parts.append(np.ascontiguousarray(t, dtype="<c16").tobytes())
    if state.charges is not None:
        for q in state.charges:
            parts.append(np.ascontiguousarray(q, dtype="<i8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> MpsState:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise ConfigError(f"{path}: not an MPS checkpoint")
    pos = 8
    version, L = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    phys = struct.unpack_from(f"<{L}I", buf, pos)
    pos += 4 * L
    bonds = struct.unpack_from(f"<{L + 1}I", buf, pos)
    pos += 4 * (L + 1)
    oc, err, chi_max, cutoff, has_q = struct.unpack_from("<idIdB", buf, pos)
    pos += struct.calcsize("<idIdB")
    tensors = []
    for k in range(L):
        shape = (bonds[k], phys[k], bonds[k + 1])
        n = int(np.prod(shape))
        tensors.append(np.frombuffer(buf, dtype="<c16", count=n, offset=pos).reshape(shape).copy())
        pos += 16 * n
    charges = None
    if has_q:
        charges = []
        for k in range(L + 1):
            charges.append(np.frombuffer(buf, dtype="<i8", count=bonds[k], offset=pos).copy())
            pos += 8 * bonds[k]
    return MpsState(tensors, chi_max=chi_max, svd_cutoff=cutoff, charges=charges,
                    ortho_center=None if oc < 0 else oc, trunc_error_acc=err)
