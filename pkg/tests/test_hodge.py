import numpy as np
import pytest

from hodgecover.complexes import (Complex2, EdgeSignal, build_incidence, complete_edges,
                                  random_complex)
from hodgecover.hodge import (ZeroSignalError, decompose, harmonic_fraction,
                              residual_certificate)


def random_pair(rng, n_max=14):
    k = random_complex(rng, n_max=n_max)
    while k.num_edges == 0:
        k = random_complex(rng, n_max=n_max)
    return k, build_incidence(k), EdgeSignal(rng.normal(size=k.num_edges))


class TestDecompose:
    def test_pure_gradient_input(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            k, inc, _ = random_pair(rng)
            phi = rng.normal(size=k.n)
            b = EdgeSignal(inc.b1.T @ phi)
            d = decompose(k, inc, b)
            scale = max(b.norm(), 1.0)
            assert np.linalg.norm(d.curl.values) < 1e-8 * scale
            assert np.linalg.norm(d.harm.values) < 1e-8 * scale

    def test_pure_curl_input(self):
        rng = np.random.default_rng(11)
        done = 0
        while done < 10:
            k, inc, _ = random_pair(rng)
            if k.num_triangles == 0:
                continue
            psi = rng.normal(size=k.num_triangles)
            b = EdgeSignal(inc.b2 @ psi)
            if b.norm() < 1e-9:
                continue
            d = decompose(k, inc, b)
            assert np.linalg.norm(d.grad.values) < 1e-8 * b.norm()
            assert np.linalg.norm(d.harm.values) < 1e-8 * b.norm()
            done += 1

    def test_k3_cycle_signal_is_fully_harmonic(self):
        # d1 b = 0 checked by hand: each vertex receives +1 and -1 once
        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        inc = build_incidence(k)
        d = decompose(k, inc, EdgeSignal([1.0, -1.0, 1.0]))
        assert d.energy_harm == pytest.approx(1.0, abs=1e-12)
        assert d.energy_grad == pytest.approx(0.0, abs=1e-12)

    def test_orthogonality_reconstruction_closure(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            k, inc, b = random_pair(rng)
            d = decompose(k, inc, b)
            nsq = b.norm() ** 2
            for u, v in ((d.grad, d.curl), (d.grad, d.harm), (d.curl, d.harm)):
                assert abs(u.values @ v.values) < 1e-8 * max(nsq, 1e-30)
            recon = d.grad.values + d.curl.values + d.harm.values
            assert np.linalg.norm(recon - b.values) < 1e-8 * max(b.norm(), 1e-15)
            assert d.energy_grad + d.energy_curl + d.energy_harm == pytest.approx(1.0, abs=1e-8)

    def test_idempotence_on_harmonic_part(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            k, inc, b = random_pair(rng)
            d = decompose(k, inc, b)
            again = decompose(k, inc, d.harm)
            scale = max(b.norm(), 1.0)
            assert np.linalg.norm(again.grad.values) < 1e-8 * scale
            assert np.linalg.norm(again.curl.values) < 1e-8 * scale

    def test_edge_exposure_identity(self):
        # <w, harm(b)> equals <harm(w), harm(b)>
        rng = np.random.default_rng(14)
        for _ in range(20):
            k, inc, b = random_pair(rng)
            d = decompose(k, inc, b)
            w = rng.normal(size=k.num_edges)
            dw = decompose(k, inc, EdgeSignal(w))
            lhs = w @ d.harm.values
            rhs = dw.harm.values @ d.harm.values
            assert abs(lhs - rhs) < 1e-8 * max(abs(lhs), 1.0)

    def test_complete_two_skeleton_kills_harmonic(self):
        n = 5
        tris = [[i, j, l] for i in range(n) for j in range(i + 1, n) for l in range(j + 1, n)]
        k = Complex2(n, complete_edges(n), tris)
        inc = build_incidence(k)
        rng = np.random.default_rng(15)
        for _ in range(10):
            b = EdgeSignal(rng.normal(size=k.num_edges))
            d = decompose(k, inc, b)
            assert np.linalg.norm(d.harm.values) < 1e-8 * b.norm()

    def test_shape_mismatch(self):
        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        with pytest.raises(ValueError, match="shape"):
            decompose(k, build_incidence(k), EdgeSignal([1.0, 2.0]))

    def test_operator_is_unweighted(self):
        # barriers live in the signal, never inside the operator: the
        # Laplacians are integer matrices and the projection is linear in
        # the signal, so rescaling b rescales every component
        from hodgecover.complexes import laplacians

        rng = np.random.default_rng(19)
        k, inc, b = random_pair(rng)
        for m in laplacians(inc):
            assert np.array_equal(m, np.round(m))
        d1 = decompose(k, inc, b)
        d2 = decompose(k, inc, EdgeSignal(7.5 * b.values))
        assert np.allclose(d2.harm.values, 7.5 * d1.harm.values, atol=1e-10)
        assert d2.energy_harm == pytest.approx(d1.energy_harm, abs=1e-12)

    def test_json_serialization(self):
        import json

        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        inc = build_incidence(k)
        d = decompose(k, inc, EdgeSignal([1.0, -1.0, 1.0]))
        doc = json.loads(d.to_json())
        assert set(doc) == {"grad", "curl", "harm",
                            "energy_grad", "energy_curl", "energy_harm"}
        assert doc["harm"] == [1.0, -1.0, 1.0]
        assert doc["energy_harm"] == 1.0


class TestHarmonicFraction:
    def test_pure_gradient_is_zero(self):
        rng = np.random.default_rng(16)
        k, inc, _ = random_pair(rng)
        b = EdgeSignal(inc.b1.T @ rng.normal(size=k.n))
        assert harmonic_fraction(b, decompose(k, inc, b)) < 1e-12

    def test_pure_harmonic_is_one(self):
        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        inc = build_incidence(k)
        b = EdgeSignal([1.0, -1.0, 1.0])
        assert harmonic_fraction(b, decompose(k, inc, b)) == pytest.approx(1.0, abs=1e-12)

    def test_zero_signal_raises(self):
        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        inc = build_incidence(k)
        b = EdgeSignal([0.0, 0.0, 0.0])
        with pytest.raises(ZeroSignalError):
            harmonic_fraction(b, decompose(k, inc, b))


class TestResidualCertificate:
    def test_pure_gradient_residual_zero(self):
        rng = np.random.default_rng(17)
        k, inc, _ = random_pair(rng)
        b = EdgeSignal(inc.b1.T @ rng.normal(size=k.n))
        report = residual_certificate(k, inc, b, decompose(k, inc, b))
        assert report["residual_lsq"] < 1e-10 * max(b.norm() ** 2, 1e-15)

    def test_pure_harmonic_residual_is_full_energy(self):
        k = Complex2(3, [[0, 1], [0, 2], [1, 2]], [])
        inc = build_incidence(k)
        b = EdgeSignal([1.0, -1.0, 1.0])
        report = residual_certificate(k, inc, b, decompose(k, inc, b))
        assert report["residual_lsq"] == pytest.approx(3.0, rel=1e-10)

    def test_agreement_on_random_instances(self):
        rng = np.random.default_rng(18)
        for _ in range(50):
            k, inc, b = random_pair(rng)
            report = residual_certificate(k, inc, b, decompose(k, inc, b))
            assert report["residual_lsq"] == pytest.approx(
                report["harm_energy"], rel=1e-7, abs=1e-12)
