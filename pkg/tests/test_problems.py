import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffreg.fieldio import read_config, read_field, write_field
from diffreg.problems import (blob_image, gaussian_smooth, load_image, make_smooth_problem,
                              make_synthetic_pair, normalize, preprocess, read_pgm,
                              smooth_velocity, swirl_velocity, write_pgm)
from diffreg.spectral import Grid, divergence, fft, norm, resample
from diffreg.transport import SchemeConfig, solve_state


@pytest.mark.parametrize("variant,amp", [("A", 0.5), ("B", 1.0)])
def test_smooth_problem_shape(variant, amp):
    g = Grid((64, 64))
    p = make_smooth_problem(variant, g)
    v = p.meta["v_star"]
    assert np.isclose(np.abs(v).max(), amp)
    assert np.isclose(p.m_r.min(), 0) and np.isclose(p.m_r.max(), 1)
    assert np.abs(p.m_t - p.m_r).max() > 0.05
    assert -1e-3 <= p.m_t.min() and p.m_t.max() <= 1 + 1e-3
    vh = np.abs(fft(v))
    k1 = np.abs(np.fft.fftfreq(64, 1 / 64))[:, None]
    k2 = np.fft.rfftfreq(64, 1 / 64)[None, :]
    assert vh[:, (k1 > 2) | (k2 > 2)].max() < 1e-9 * vh.max()
    with pytest.raises(ValueError):
        make_smooth_problem("C", g)


def test_smooth_problem_is_nested_across_grids():
    coarse = make_smooth_problem("A", Grid((32, 32)))
    fine = make_smooth_problem("A", Grid((64, 64)))
    assert np.allclose(resample(fine.m_r, (32, 32)), coarse.m_r, atol=1e-12)


def test_synthetic_pair_is_inverted_by_reverse_flow():
    g = Grid((64, 64))
    m_r = blob_image(g, 8)
    v = smooth_velocity(g, "A")
    pair = make_synthetic_pair(v, m_r)
    assert np.allclose(pair.m_t, solve_state(v, m_r, SchemeConfig("sl", 0.2))[-1])
    back = solve_state(pair.v_true, pair.m_t, SchemeConfig("sl", 0.2))[-1]
    assert np.abs(back - m_r).max() <= 5e-2
    assert norm(back - m_r) ** 2 <= 1e-4 * norm(m_r) ** 2


def test_swirl_is_divergence_free():
    g = Grid((32, 32))
    assert np.abs(divergence(swirl_velocity(g))).max() < 1e-13


def test_gaussian_smoothing_damps_high_modes():
    g = Grid((64, 64))
    x1, _ = g.coords()
    k = 31
    u = np.cos(k * x1)
    ratio = np.abs(gaussian_smooth(u, 1.0)).max() / np.abs(u).max()
    assert np.isclose(ratio, np.exp(-0.5 * (k * g.h[0]) ** 2), rtol=1e-10)
    assert ratio >= np.exp(-np.pi**2 / 2)
    assert np.allclose(gaussian_smooth(u, 0), u)


def test_normalize_edge_cases():
    assert np.all(normalize(np.full((8, 8), 3.0)) == 0)
    u = np.arange(64.0).reshape(8, 8)
    out = preprocess(u, 0)
    assert out.min() == 0 and out.max() == 1


@given(st.integers(0, 2**31 - 1), st.sampled_from([8, 16]))
def test_blob_image_range(seed, n):
    u = blob_image(Grid((n, n)), 5, seed)
    assert u.min() == 0 and np.isclose(u.max(), 1)


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip(tmp_path, maxval):
    rng = np.random.default_rng(0)
    img = rng.integers(0, maxval + 1, (6, 10))
    img[0, 0], img[0, 1] = 0, maxval
    dtype = ">u2" if maxval > 255 else "u1"
    path = tmp_path / "a.pgm"
    with open(path, "wb") as f:
        f.write(b"P5\n# comment\n10 6\n%d\n" % maxval + img.astype(dtype).tobytes())
    assert np.allclose(read_pgm(path), img / maxval)
    write_pgm(tmp_path / "b.pgm", img / maxval)
    assert np.allclose(read_pgm(tmp_path / "b.pgm"), img / maxval, atol=1 / 65535)


def test_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ValueError):
        read_pgm(bad)
    bad.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ValueError, match="truncated"):
        read_pgm(bad)


def test_load_image_resamples_to_grid(tmp_path):
    img = np.random.default_rng(0).random((30, 40))
    write_pgm(tmp_path / "a.pgm", img)
    u = load_image(str(tmp_path / "a.pgm"), Grid((32, 32)))
    assert u.shape == (32, 32) and u.min() == 0 and u.max() == 1


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
def test_field_file_round_trip(seed, ncomp):
    import tempfile, os
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((ncomp, 4, 6))
    u = u[0] if ncomp == 1 else u
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "f.vrf")
        write_field(path, u)
        assert np.array_equal(read_field(path), u)


def test_field_file_header(tmp_path):
    write_field(tmp_path / "f.vrf", np.zeros((2, 4, 6)))
    raw = (tmp_path / "f.vrf").read_bytes()
    assert raw[:4] == b"VRF1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [4, 6, 2]
    assert len(raw) == 16 + 8 * 48
    (tmp_path / "g.vrf").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_field(tmp_path / "g.vrf")
    (tmp_path / "h.vrf").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_field(tmp_path / "h.vrf")


def test_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# settings\nbetav = 1e-3\ncheb-iters=5  # inline\n\n")
    assert read_config(p) == {"betav": "1e-3", "cheb_iters": "5"}
    p.write_text("oops\n")
    with pytest.raises(ValueError):
        read_config(p)
