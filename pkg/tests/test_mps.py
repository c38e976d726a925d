import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from bosequench import mps
from bosequench.errors import ConfigError, InvariantViolation
from bosequench.mps import (MpsState, apply_gate_schmidt, apply_two_site_gate, canonicalize,
                            correlation_row, expectation_one_site, expectation_two_site,
                            load_checkpoint, local_profile, overlap, product_state, random_mps,
                            save_checkpoint, to_dense, to_schmidt_form)
from bosequench.tebd import boson_ops


def _conserving_gate(d, rng, scale=1.0):
    """exp(-i h) for a random Hermitian h that commutes with n_1 + n_2."""
    ntot = (np.arange(d)[:, None] + np.arange(d)[None, :]).ravel()
    h = rng.normal(size=(d * d, d * d)) + 1j * rng.normal(size=(d * d, d * d))
    h = scale * (h + h.conj().T)
    h[ntot[:, None] != ntot[None, :]] = 0
    return scipy.linalg.expm(-1j * h)


def _random_unitary(n, rng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _apply_dense(psi, gate, bond, dims):
    L = len(dims)
    t = psi.reshape(dims)
    d1, d2 = dims[bond], dims[bond + 1]
    t = np.moveaxis(t, (bond, bond + 1), (0, 1)).reshape(d1 * d2, -1)
    t = (gate @ t).reshape([d1, d2] + [dims[k] for k in range(L) if k not in (bond, bond + 1)])
    return np.moveaxis(t, (0, 1), (bond, bond + 1)).ravel()


def _is_left_iso(T):
    m = T.reshape(-1, T.shape[2])
    return np.allclose(m.conj().T @ m, np.eye(T.shape[2]), atol=1e-12)


def _is_right_iso(T):
    m = T.reshape(T.shape[0], -1)
    return np.allclose(m @ m.conj().T, np.eye(T.shape[0]), atol=1e-12)


def _half_filled(L, d, rng, steps=3):
    # charged state with some entanglement: product state hit by random conserving gates
    occ = [1 if k % 2 == 0 else 0 for k in range(L)]
    st = product_state(occ, d, chi_max=64, svd_cutoff=0.0)
    for _ in range(steps):
        for b in list(range(0, L - 1, 2)) + list(range(1, L - 1, 2)):
            canonicalize(st, b, inplace=True)
            apply_two_site_gate(st, b, _conserving_gate(d, rng))
    return st


def test_product_state_is_canonical_and_normalized():
    st = product_state([0, 1, 2, 0], 3)
    assert st.particle_number() == 3
    assert st.norm() == pytest.approx(1.0)
    vec = to_dense(st)
    assert vec[np.ravel_multi_index((0, 1, 2, 0), (3,) * 4)] == 1.0
    with pytest.raises(ConfigError):
        product_state([0, 3], 3)


def test_canonical_form_isometries_and_norm():
    st = random_mps(6, 3, 9, rng=1)
    psi = to_dense(st)
    for c in range(6):
        s = canonicalize(st, c)
        assert s.norm() == pytest.approx(1.0, abs=1e-12)
        assert all(_is_left_iso(s.tensors[k]) for k in range(c))
        assert all(_is_right_iso(s.tensors[k]) for k in range(c + 1, 6))
        assert abs(abs(np.vdot(psi, to_dense(s))) - 1) < 1e-12


def test_canonicalize_is_idempotent():
    st = canonicalize(random_mps(7, 2, 8, rng=2), 3)
    again = canonicalize(st, 3)
    for a, b in zip(st.tensors, again.tensors):
        assert np.array_equal(a, b)
    charged = canonicalize(_half_filled(6, 3, np.random.default_rng(0)), 2)
    twice = canonicalize(canonicalize(charged, 5), 2)
    for a, b in zip(charged.tensors, twice.tensors):
        assert np.allclose(a, b, atol=1e-12)


def test_identity_gate_leaves_state_unchanged():
    st = canonicalize(random_mps(5, 3, 9, rng=3), 1)
    before = to_dense(st)
    rep = apply_two_site_gate(st, 1, np.eye(9))
    assert rep.discarded_weight < 1e-20
    assert abs(np.vdot(before, to_dense(st)) - 1) < 1e-12


def test_swap_gate_matches_dense():
    d = 3
    swap = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            swap[j * d + i, i * d + j] = 1
    st = canonicalize(random_mps(5, d, 27, rng=4), 2)
    psi = to_dense(st)
    apply_two_site_gate(st, 2, swap)
    assert np.allclose(to_dense(st), _apply_dense(psi, swap, 2, [d] * 5), atol=1e-12)
    assert st.ortho_center == 3


def test_capped_update_discards_the_dense_schmidt_tail():
    rng = np.random.default_rng(5)
    d, L, bond, cap = 2, 6, 2, 3
    st = canonicalize(random_mps(L, d, 8, rng=rng, svd_cutoff=0.0), bond)
    gate = _random_unitary(d * d, rng)
    psi = _apply_dense(to_dense(st), gate, bond, [d] * L)
    s = np.linalg.svd(psi.reshape(d ** (bond + 1), -1), compute_uv=False)
    st.chi_max = cap
    rep = apply_two_site_gate(st, bond, gate)
    tail = np.sum(s[cap:] ** 2) / np.sum(s**2)
    assert rep.new_bond_dim == cap
    assert rep.discarded_weight == pytest.approx(tail, rel=1e-10)
    assert st.trunc_error_acc == pytest.approx(tail, rel=1e-10)
    assert st.norm() == pytest.approx(1.0, abs=1e-12)


def test_cutoff_uses_relative_discarded_weight():
    rng = np.random.default_rng(6)
    st = canonicalize(random_mps(6, 2, 8, rng=rng, svd_cutoff=0.0), 2)
    s = np.linalg.svd(to_dense(st).reshape(8, 8), compute_uv=False)
    w = s[::-1] ** 2 / np.sum(s**2)
    cut = 0.5 * (np.cumsum(w)[2] + np.cumsum(w)[3])  # drops exactly three values
    st.svd_cutoff = cut
    rep = apply_two_site_gate(st, 2, np.eye(4))
    assert rep.new_bond_dim == 5
    assert rep.discarded_weight == pytest.approx(np.cumsum(w)[2], rel=1e-10)


def test_number_conserving_gate_keeps_labels_and_particle_number():
    rng = np.random.default_rng(7)
    st = _half_filled(6, 3, rng)
    assert st.particle_number() == 3
    _, n, _ = boson_ops(2)
    total = sum(expectation_one_site(st, j, n).real for j in range(6))
    assert total == pytest.approx(3.0, abs=1e-12)
    psi = to_dense(st)
    occ = np.array(np.unravel_index(np.arange(3**6), (3,) * 6)).sum(axis=0)
    assert np.sum(np.abs(psi[occ != 3]) ** 2) < 1e-24


def test_non_conserving_gate_drops_labels():
    rng = np.random.default_rng(8)
    st = product_state([1, 0, 1, 0], 2)
    apply_two_site_gate(st, 0, _random_unitary(4, rng))
    assert st.charges is None


def test_gate_errors():
    st = canonicalize(random_mps(4, 2, 4, rng=9), 0)
    with pytest.raises(InvariantViolation):
        apply_two_site_gate(st, 2, np.eye(4))
    with pytest.raises(ConfigError):
        apply_two_site_gate(st, 0, np.eye(9))
    with pytest.raises(ConfigError, match="unitary"):
        apply_two_site_gate(st, 0, 2 * np.eye(4))
    with pytest.raises(InvariantViolation):
        apply_gate_schmidt(random_mps(4, 2, 4, rng=9), 0, np.eye(4))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), L=st.integers(3, 7), center=st.integers(0, 6))
def test_local_expectations_are_gauge_invariant(seed, L, center):
    center = min(center, L - 1)
    st = random_mps(L, 2, 4, rng=seed)
    op = np.array([[0.3, 1 - 0.5j], [1 + 0.5j, -0.7]])
    a = [expectation_one_site(st, j, op) for j in range(L)]
    b = [expectation_one_site(canonicalize(st, center), j, op) for j in range(L)]
    assert np.allclose(a, b, atol=1e-12)
    psi = to_dense(st)
    for j in range(L):
        full = np.kron(np.kron(np.eye(2**j), op), np.eye(2 ** (L - j - 1)))
        assert a[j] == pytest.approx(np.vdot(psi, full @ psi), abs=1e-12)


def test_two_site_expectations_and_rows_match_dense():
    L, d = 6, 3
    st = random_mps(L, d, 9, rng=10)
    psi = to_dense(st)
    a, n, _ = boson_ops(d - 1)
    ad = a.conj().T

    def embed(op, j):
        return np.kron(np.kron(np.eye(d**j), op), np.eye(d ** (L - j - 1)))

    for i, j in [(0, 1), (1, 4), (2, 5)]:
        ref = np.vdot(psi, embed(ad, i) @ embed(a, j) @ psi)
        assert expectation_two_site(st, i, j, ad, a) == pytest.approx(ref, abs=1e-12)
    row = correlation_row(st, 1, n, n)
    ref = [np.vdot(psi, embed(n, 1) @ embed(n, j) @ psi) for j in range(2, L)]
    assert np.allclose(row, ref, atol=1e-12)
    to_schmidt_form(st)
    assert np.allclose(correlation_row(st, 1, n, n, sites=[3, 5]), [ref[1], ref[3]], atol=1e-12)
    with pytest.raises(ConfigError):
        expectation_two_site(st, 3, 3, n, n)


@pytest.mark.parametrize("schmidt", [False, True])
def test_local_profile_matches_individual_expectations(schmidt):
    st = _half_filled(7, 3, np.random.default_rng(11))
    if schmidt:
        to_schmidt_form(st)
    a, n, pair = boson_ops(2)
    prof = local_profile(st, {"n": n, "pair": pair}, {"hop": (a.conj().T, a)})
    for j in range(7):
        assert prof["n"][j] == pytest.approx(expectation_one_site(st, j, n), abs=1e-12)
        assert prof["pair"][j] == pytest.approx(expectation_one_site(st, j, pair), abs=1e-12)
    for j in range(6):
        ref = expectation_two_site(st, j, j + 1, a.conj().T, a)
        assert prof["hop"][j] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("charged", [False, True])
def test_schmidt_form_values_and_isometries(charged):
    rng = np.random.default_rng(12)
    st = _half_filled(6, 3, rng) if charged else random_mps(6, 3, 9, rng=rng)
    psi = to_dense(st)
    to_schmidt_form(st)
    assert abs(abs(np.vdot(psi, to_dense(st))) - 1) < 1e-12
    assert all(_is_right_iso(t) for t in st.tensors)
    for k in range(1, 6):
        s = np.linalg.svd(psi.reshape(3**k, -1), compute_uv=False)
        s = s[s > 1e-14]
        assert np.allclose(np.sort(st.schmidt[k])[::-1][:len(s)], s, atol=1e-12)
    if charged:
        assert all(np.all(np.diff(q) >= 0) for q in st.charges)


@pytest.mark.parametrize("path", ["compiled", "interpreted"])
def test_schmidt_gate_update_matches_dense(path, monkeypatch):
    if path == "interpreted":
        monkeypatch.setattr(mps, "_kernels", None)
    elif mps._kernels is None:
        pytest.skip("compiled kernel unavailable")
    rng = np.random.default_rng(13)
    L, d = 6, 3
    st = to_schmidt_form(_half_filled(L, d, rng))
    st.svd_cutoff = 0.0
    psi = to_dense(st)
    for b in [0, 2, 4, 1, 3, 2]:
        g = _conserving_gate(d, rng, 0.5)
        rep = apply_gate_schmidt(st, b, g)
        psi = _apply_dense(psi, g, b, [d] * L)
        assert rep.discarded_weight < 1e-20
    assert abs(abs(np.vdot(psi, to_dense(st))) - 1) < 1e-12
    assert all(_is_right_iso(t) for t in st.tensors)
    for k in range(1, L):
        s = np.linalg.svd(psi.reshape(d**k, -1), compute_uv=False)
        assert np.allclose(np.sort(st.schmidt[k])[::-1], s[:len(st.schmidt[k])], atol=1e-10)


def test_compiled_and_interpreted_updates_agree(monkeypatch):
    if mps._kernels is None:
        pytest.skip("compiled kernel unavailable")
    rng = np.random.default_rng(14)
    base = to_schmidt_form(_half_filled(8, 4, rng, steps=4))
    base.chi_max = 6
    gate = _conserving_gate(4, rng, 0.3)
    a, b = base.copy(), base.copy()
    ra = apply_gate_schmidt(a, 3, gate)
    monkeypatch.setattr(mps, "_kernels", None)
    rb = apply_gate_schmidt(b, 3, gate)
    assert ra.new_bond_dim == rb.new_bond_dim
    assert ra.discarded_weight == pytest.approx(rb.discarded_weight, rel=1e-10, abs=1e-18)
    assert np.allclose(a.schmidt[4], b.schmidt[4], atol=1e-13)
    assert np.array_equal(a.charges[4], b.charges[4])
    assert abs(abs(overlap(a, b)) - 1) < 1e-12


def test_many_exact_updates_stay_exact():
    # no truncation: 100 random gates reproduce the dense evolution
    rng = np.random.default_rng(15)
    L, d = 5, 3
    st = to_schmidt_form(_half_filled(L, d, rng, steps=1))
    st.svd_cutoff = 0.0
    st.chi_max = 100
    psi = to_dense(st)
    for _ in range(100):
        b = int(rng.integers(0, L - 1))
        g = _conserving_gate(d, rng, 0.2)
        apply_gate_schmidt(st, b, g)
        psi = _apply_dense(psi, g, b, [d] * L)
    assert st.trunc_error_acc < 1e-20
    assert abs(abs(np.vdot(psi, to_dense(st))) - 1) < 1e-10


@pytest.mark.parametrize("charged", [False, True])
def test_checkpoint_round_trip(tmp_path, charged):
    rng = np.random.default_rng(16)
    st = _half_filled(5, 3, rng) if charged else canonicalize(random_mps(5, 3, 6, rng=rng), 2)
    st.trunc_error_acc = 1.25e-7
    path = tmp_path / "state.bin"
    save_checkpoint(st, path)
    back = load_checkpoint(path)
    assert back.ortho_center == st.ortho_center
    assert back.trunc_error_acc == st.trunc_error_acc
    assert back.chi_max == st.chi_max and back.svd_cutoff == st.svd_cutoff
    for a, b in zip(st.tensors, back.tensors):
        assert np.array_equal(a, b)
    if charged:
        for a, b in zip(st.charges, back.charges):
            assert np.array_equal(a, b)
    else:
        assert back.charges is None
    raw = path.read_bytes()
    assert raw[:8] == b"BQMPS\x00\x00\x01"
    header = 8 + 8 + 4 * 5 + 4 * 6 + 25
    body = 16 * sum(t.size for t in st.tensors)
    labels = 8 * sum(len(q) for q in st.charges) if charged else 0
    assert len(raw) == header + body + labels
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope" + raw[4:])
    with pytest.raises(ConfigError):
        load_checkpoint(bad)


def test_structure_errors():
    with pytest.raises(ConfigError):
        MpsState([np.zeros((2, 2, 1))])
    with pytest.raises(ConfigError):
        MpsState([np.zeros((1, 2, 2)), np.zeros((3, 2, 1))])
    with pytest.raises(ConfigError):
        MpsState([np.zeros((1, 2, 1))], charges=[np.zeros(1)])
    zero = MpsState([np.zeros((1, 2, 1))], ortho_center=0)
    with pytest.raises(InvariantViolation):
        zero.normalize()
