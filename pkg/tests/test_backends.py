"""Backend contract tests.

Oracles: direct index arithmetic for the oracle backend, binomial bounds
for the edge degrader, and a real child process for the external client.
"""

import sys

import numpy as np
import pytest

from landtile.backends import (
    EdgeDegradedBackend, make_edge_degraded, make_external_backend,
    make_linear_backend, make_oracle_backend,
)
from landtile.errors import BackendError, ProtocolError, ValidationError
from landtile.kernels import IGNORE
from landtile.model import LinearModel
from landtile.raster import ClassMap, Window
from landtile.spectral import ChannelStack
from landtile.tiling import TileSpec, extract_tile, plan_tiles

CHILD = [sys.executable, "-u", str(__import__("pathlib").Path(__file__).parent
                                   / "protocol_child.py")]


def stack_of(channels):
    c, h, w = channels.shape
    names = {3: ["B", "G", "R"],
             6: ["B", "G", "R", "NIR", "NDVI", "NDWI"]}[c]
    return ChannelStack(channels=channels.astype(np.float32), names=names,
                        width=w, height=h)


def rand_truth(rng, w, h, k=9):
    return ClassMap(width=w, height=h,
                    labels=rng.integers(0, k, size=(h, w), dtype=np.uint8))


def test_oracle_returns_padded_truth():
    rng = np.random.default_rng(50)
    truth = rand_truth(rng, 30, 22)
    plan = plan_tiles(30, 22, TileSpec(tile=16, stride=8))
    backend = make_oracle_backend(truth)
    dummy = stack_of(rng.standard_normal((3, 16, 16)))
    for k in range(plan.n_tiles):
        want = extract_tile(truth, plan, k).labels
        got = backend.predict(k, dummy, plan.source_window(k))
        assert np.array_equal(got, want), k


def test_oracle_zero_mode_pads_ignore():
    rng = np.random.default_rng(51)
    truth = rand_truth(rng, 8, 8)
    backend = make_oracle_backend(truth, pad_mode="zero")
    got = backend.predict(0, stack_of(rng.standard_normal((3, 12, 12))),
                          Window(-2, -2, 12, 12))
    assert (got[:2, :] == IGNORE).all()
    assert (got[:, :2] == IGNORE).all()
    assert (got[-2:, :] == IGNORE).all()
    assert np.array_equal(got[2:10, 2:10], truth.labels)


def test_degrader_identity_cases():
    rng = np.random.default_rng(52)
    truth = rand_truth(rng, 40, 40)
    plan = plan_tiles(40, 40, TileSpec(tile=40, stride=40))
    oracle = make_oracle_backend(truth)
    dummy = stack_of(rng.standard_normal((3, 40, 40)))
    win = plan.source_window(0)
    base = oracle.predict(0, dummy, win)
    for backend in (make_edge_degraded(oracle, 0, 0.5, seed=1, k=9),
                    make_edge_degraded(oracle, 8, 0.0, seed=1, k=9)):
        assert np.array_equal(backend.predict(0, dummy, win), base)


def test_degrader_flip_prob_one_statistics():
    # with flip_prob=1, band pixels change with probability (K-1)/K;
    # the interior is untouched
    rng = np.random.default_rng(53)
    k = 9
    truth = rand_truth(rng, 128, 128, k)
    oracle = make_oracle_backend(truth)
    backend = make_edge_degraded(oracle, band=32, flip_prob=1.0, seed=7, k=k)
    dummy = stack_of(rng.standard_normal((3, 128, 128)))
    win = Window(0, 0, 128, 128)
    base = oracle.predict(0, dummy, win)
    got = backend.predict(0, dummy, win)
    assert np.array_equal(got[32:96, 32:96], base[32:96, 32:96])
    edge = np.ones((128, 128), bool)
    edge[32:96, 32:96] = False
    n_edge = int(edge.sum())
    changed = int((got != base)[edge].sum())
    p = (k - 1) / k
    sigma = np.sqrt(n_edge * p * (1 - p))
    assert abs(changed - n_edge * p) <= 3 * sigma


def test_degrader_expected_altered_fraction_band_quarter():
    # T=64, band=16: area fraction 1-(32/64)^2=0.75, flip 0.5 uniform
    # over K keeps a pixel with prob 1/K, so change rate 0.5*(8/9)
    rng = np.random.default_rng(54)
    k = 9
    truth = rand_truth(rng, 64, 64, k)
    oracle = make_oracle_backend(truth)
    backend = make_edge_degraded(oracle, band=16, flip_prob=0.5, seed=3, k=k)
    dummy = stack_of(rng.standard_normal((3, 64, 64)))
    changed = 0
    trials = 50
    for tile_id in range(trials):
        got = backend.predict(tile_id, dummy, Window(0, 0, 64, 64))
        changed += int((got != truth.labels).sum())
    n = trials * 64 * 64
    expect = 0.75 * 0.5 * (k - 1) / k
    sigma = np.sqrt(expect * (1 - expect) / n)
    assert abs(changed / n - expect) <= 4 * sigma


def test_degrader_deterministic_per_tile_id():
    rng = np.random.default_rng(55)
    truth = rand_truth(rng, 32, 32)
    oracle = make_oracle_backend(truth)
    backend = make_edge_degraded(oracle, band=8, flip_prob=0.7, seed=9, k=9)
    dummy = stack_of(rng.standard_normal((3, 32, 32)))
    win = Window(0, 0, 32, 32)
    a = backend.predict(4, dummy, win)
    b = backend.predict(4, dummy, win)
    c = backend.predict(5, dummy, win)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_degrader_validation():
    rng = np.random.default_rng(56)
    truth = rand_truth(rng, 16, 16)
    oracle = make_oracle_backend(truth)
    with pytest.raises(ValidationError):
        EdgeDegradedBackend(oracle, band=-1, flip_prob=0.5, seed=0, k=9)
    with pytest.raises(ValidationError):
        EdgeDegradedBackend(oracle, band=2, flip_prob=1.5, seed=0, k=9)
    with pytest.raises(ValidationError):
        EdgeDegradedBackend(oracle, band=2, flip_prob=0.5, seed=0, k=1)
    backend = EdgeDegradedBackend(oracle, band=10, flip_prob=0.5, seed=0, k=9)
    dummy = stack_of(np.zeros((3, 16, 16), np.float32))
    with pytest.raises(ValidationError):
        backend.predict(0, dummy, Window(0, 0, 16, 16))  # band > T/2


def test_linear_backend_channel_check():
    model = LinearModel(k=3, channels=3)
    backend = make_linear_backend(model)
    assert backend.channels == 3
    rng = np.random.default_rng(57)
    out = backend.predict(0, stack_of(rng.standard_normal((3, 8, 8))),
                          Window(0, 0, 8, 8))
    assert out.shape == (8, 8)
    with pytest.raises(ValidationError):
        backend.predict(0, stack_of(rng.standard_normal((6, 8, 8))),
                        Window(0, 0, 8, 8))


def truth_in_channel0(labels, k, c=6):
    """Encode labels so the threshold child recovers them exactly."""
    h, w = labels.shape
    chans = np.zeros((c, h, w), np.float32)
    chans[0] = (labels.astype(np.float32) + 0.5) / k
    return stack_of(chans)


def test_external_backend_round_trip():
    rng = np.random.default_rng(58)
    k = 9
    labels = rng.integers(0, k, size=(16, 16), dtype=np.uint8)
    with make_external_backend(CHILD + ["--k", "9"], channels=6,
                               tile=16, timeout=30) as backend:
        stack = truth_in_channel0(labels, k)
        for tile_id in (0, 1, 7):
            got = backend.predict(tile_id, stack, Window(0, 0, 16, 16))
            assert np.array_equal(got, labels)


def test_external_backend_string_command():
    import shlex
    cmd = " ".join(shlex.quote(p) for p in CHILD)
    with make_external_backend(cmd, channels=3, tile=8,
                               timeout=30) as backend:
        rng = np.random.default_rng(59)
        labels = rng.integers(0, 9, size=(8, 8), dtype=np.uint8)
        stack = truth_in_channel0(labels, 9, c=3)
        assert np.array_equal(
            backend.predict(0, stack, Window(0, 0, 8, 8)), labels)


def test_external_backend_version_mismatch():
    with pytest.raises(ProtocolError, match="handshake"):
        make_external_backend(CHILD + ["--mode", "wrong-version"],
                              channels=3, tile=8, timeout=30)


def test_external_backend_child_dies_midstream():
    backend = make_external_backend(CHILD + ["--mode", "die-mid"],
                                    channels=3, tile=8, timeout=30)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises(BackendError, match="tile 0"):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_short_payload():
    backend = make_external_backend(CHILD + ["--mode", "short-payload"],
                                    channels=3, tile=8, timeout=30)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises((BackendError, ProtocolError), match="byte offset"):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_wrong_id():
    backend = make_external_backend(CHILD + ["--mode", "wrong-id"],
                                    channels=3, tile=8, timeout=30)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises(ProtocolError, match="in flight"):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_garbage_reply():
    backend = make_external_backend(CHILD + ["--mode", "garbage"],
                                    channels=3, tile=8, timeout=30)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises((ProtocolError, BackendError)):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_error_frame():
    backend = make_external_backend(CHILD + ["--mode", "error-frame"],
                                    channels=3, tile=8, timeout=30)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises(BackendError, match="injected failure"):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_timeout():
    backend = make_external_backend(CHILD + ["--mode", "slow"],
                                    channels=3, tile=8, timeout=0.5)
    stack = stack_of(np.zeros((3, 8, 8), np.float32))
    with pytest.raises(ProtocolError, match="timed out"):
        backend.predict(0, stack, Window(0, 0, 8, 8))
    backend.close()


def test_external_backend_spawn_failure():
    with pytest.raises(BackendError, match="spawn"):
        make_external_backend(["/nonexistent/binary"], channels=3, tile=8)
