"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary)
before asserting. Criteria 6 and 7 run the full 10 s benchmark and dominate
the runtime of the whole suite (roughly 20 minutes on one core).
"""

import time

import numpy as np

import scalar_oracle
from acceptance_report import criterion
from covderev import cli
from covderev.hermitian import geometric_mean, hermitize
from covderev.model import ModelConfig, assemble_mixture_covariance, init_parameters, renormalize_scale, stack_observations
from covderev.optimizer import fit_observations, update_noise_covariance, update_source_variance, update_tap_covariances
from covderev.pipeline import mean_metric, run_bench
from covderev.simulate import ScenarioConfig
from covderev.stft import Waveform, analyze, synthesize
from test_model import random_model
from test_optimizer import reverberant_spectrogram

SEEDS = [0, 1, 2, 3, 4]


def random_pd(rng, n):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return hermitize(g @ g.conj().T / n + 0.5 * np.eye(n))


def rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def test_criterion_1_monotone_mm():
    with criterion(1, "monotone MM cost on 50 random problems per configuration") as info:
        start = time.perf_counter()
        worst = -np.inf
        n_problems = 0
        for tap_length, stack_length in [(1, 1), (6, 1), (6, 6)]:
            cfg = ModelConfig(n_mics=2, tap_length=tap_length, stack_length=stack_length, n_iterations=20)
            for seed in range(50):
                rng = np.random.default_rng(1000 * tap_length + 100 * stack_length + seed)
                x = reverberant_spectrogram(
                    rng, n_frames=50, n_bins=8, n_mics=2, n_taps=int(rng.integers(1, 9)), noise=rng.uniform(0.01, 0.5)
                )
                m0 = init_parameters(x, cfg)
                _, trace = fit_observations(m0, stack_observations(x, stack_length), 20)
                total = trace.steps().sum(axis=1)
                worst = max(worst, np.max((total[1:] - total[:-1]) / np.abs(total[:-1])))
                n_problems += 1
        elapsed = time.perf_counter() - start
        info.append("{} problems, largest relative step {:.2e} (slack 1e-8)".format(n_problems, worst))
        assert worst <= 1e-8
        assert elapsed < 120


def test_criterion_2_scalar_oracle():
    with criterion(2, "single-channel trajectories match the scalar reference") as info:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(4):
            rng = np.random.default_rng(200 + seed)
            x = reverberant_spectrogram(rng, n_frames=40, n_bins=3, n_mics=1, noise=0.1)
            cfg = ModelConfig(n_mics=1, tap_length=6, stack_length=1, n_iterations=10)
            history = []
            fit_observations(init_parameters(x, cfg), stack_observations(x, 1), 10,
                             callback=lambda t, m: history.append(m.copy()))
            for k in range(x.shape[1]):
                ref = scalar_oracle.run(list(x[:, k, 0]), 6, 10)
                for t in range(10):
                    v, taps, noise = ref[t + 1]
                    m = history[t]
                    worst = max(
                        worst,
                        np.max(np.abs(m.source_variance[k] - v) / np.abs(v)),
                        np.max(np.abs(m.tap_covariances[k, :, 0, 0] - taps) / np.abs(taps)),
                        abs(m.noise_covariance[k, 0, 0] - noise) / abs(noise),
                    )
        elapsed = time.perf_counter() - start
        info.append("largest relative deviation {:.2e} (tolerance 1e-7)".format(worst))
        assert worst < 1e-7
        assert elapsed < 10


def test_criterion_3_geometric_mean():
    with criterion(3, "geometric-mean properties on 1000 random pairs, dims 1-12") as info:
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        errs = dict(riccati=0.0, idempotence=0.0, symmetry=0.0, scaling=0.0, congruence=0.0, hermitian=0.0)
        for i in range(1000):
            n = i % 12 + 1
            a, b = random_pd(rng, n), random_pd(rng, n)
            x = geometric_mean(a, b)
            errs["riccati"] = max(errs["riccati"], rel(x @ np.linalg.solve(a, x), b))
            errs["hermitian"] = max(errs["hermitian"], rel(x, x.conj().T))
            errs["idempotence"] = max(errs["idempotence"], rel(geometric_mean(a, a), a))
            errs["symmetry"] = max(errs["symmetry"], rel(geometric_mean(b, a), x))
            s, t = rng.uniform(0.1, 10.0, 2)
            errs["scaling"] = max(errs["scaling"], rel(geometric_mean(s * a, t * b), np.sqrt(s * t) * x))
            m = np.eye(n) + 0.3 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(n)
            lhs = geometric_mean(m @ a @ m.conj().T, m @ b @ m.conj().T)
            errs["congruence"] = max(errs["congruence"], rel(lhs, m @ x @ m.conj().T))
        elapsed = time.perf_counter() - start
        info.append(", ".join("{} {:.1e}".format(k, v) for k, v in errs.items()) + " (tolerance 1e-9)")
        assert max(errs.values()) < 1e-9
        assert elapsed < 30


def test_criterion_4_fixed_points():
    with criterion(4, "update families are identity maps on model-matched data") as info:
        worst = {}
        for n_mics, tap_length, stack_length in [(1, 6, 1), (2, 1, 1), (2, 6, 1), (2, 6, 6), (2, 1, 6), (3, 3, 3)]:
            rng = np.random.default_rng(40 + 7 * tap_length + stack_length + n_mics)
            m = random_model(rng, 4, 20, n_mics, tap_length, stack_length)
            renormalize_scale(m)
            obs = assemble_mixture_covariance(m)
            cases = dict(
                variance=rel(update_source_variance(m, obs).source_variance, m.source_variance),
                taps=rel(update_tap_covariances(m, obs).tap_covariances, m.tap_covariances),
                noise=rel(update_noise_covariance(m, obs).noise_covariance, m.noise_covariance),
            )
            for k, v in cases.items():
                worst[k] = max(worst.get(k, 0.0), v)
        info.append(", ".join("{} {:.1e}".format(k, v) for k, v in worst.items()) + " (tolerance 1e-9)")
        assert max(worst.values()) < 1e-9


def test_criterion_5_stft_round_trip():
    with criterion(5, "STFT round trip on random 2-channel 2 s signals") as info:
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(500 + seed)
            x = rng.uniform(-1, 1, size=(32000, 2))
            y = synthesize(analyze(Waveform(x, 16000)), 16000).samples
            worst = max(worst, np.max(np.abs(y[1024:-1024] - x[1024:-1024])))
        info.append("max interior error {:.1e} (tolerance 1e-8)".format(worst))
        assert worst < 1e-8


def test_criterion_6_end_to_end_improvement():
    with criterion(6, "PROPOSED 2 improves FWSegSNR by >= 1 dB without worsening CD") as info:
        reports, _ = run_bench(ScenarioConfig(scenario="time-invariant"), SEEDS, ("unprocessed", "proposed2"))
        gain = mean_metric(reports, "proposed2") - mean_metric(reports, "unprocessed")
        cd_un = mean_metric(reports, "unprocessed", "cd_db")
        cd_p2 = mean_metric(reports, "proposed2", "cd_db")
        info.append("5 seeds, FWSegSNR {:.2f} -> {:.2f} dB (+{:.2f}), CD {:.2f} -> {:.2f} dB".format(
            mean_metric(reports, "unprocessed"), mean_metric(reports, "proposed2"), gain, cd_un, cd_p2))
        assert gain >= 1.0
        assert cd_p2 <= cd_un


def test_criterion_7_time_varying_ordering():
    with criterion(7, "time-varying mean FWSegSNR ordering PROPOSED 2 >= PROPOSED 1 >= TIV") as info:
        reports, _ = run_bench(ScenarioConfig(scenario="time-varying"), SEEDS, ("tiv", "proposed1", "proposed2"))
        p2, p1, tiv = (mean_metric(reports, m) for m in ("proposed2", "proposed1", "tiv"))
        per_seed = sum(
            1
            for s in SEEDS
            if [r.fwsegsnr_db for r in reports if r.utterance == "seed{}".format(s) and r.method == "proposed2"][0]
            >= [r.fwsegsnr_db for r in reports if r.utterance == "seed{}".format(s) and r.method == "proposed1"][0]
            >= [r.fwsegsnr_db for r in reports if r.utterance == "seed{}".format(s) and r.method == "tiv"][0]
        )
        info.append("means P2 {:.2f}, P1 {:.2f}, TIV {:.2f} dB; ordering holds on {}/5 seeds".format(
            p2, p1, tiv, per_seed))
        assert p2 >= p1 >= tiv


def test_criterion_8_determinism(tmp_path):
    with criterion(8, "identical config and seed give byte-identical mixtures and metrics CSVs") as info:
        sim = ["simulate", "--seed", "11", "--duration", "3", "--scenario", "time-varying"]
        bench = ["bench", "--seeds", "11", "12", "--methods", "unprocessed", "proposed2", "--iterations", "3",
                 "--duration", "3"]
        for run in ("a", "b"):
            assert cli.main(sim + ["--out-dir", str(tmp_path / run / "sim")]) == 0
            assert cli.main(bench + ["--out-dir", str(tmp_path / run / "bench")]) == 0
        same = {}
        for name in ("sim/mixture.wav", "sim/reference.wav", "bench/metrics.csv"):
            same[name] = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        info.append(", ".join("{} {}".format(k, "identical" if v else "DIFFERENT") for k, v in same.items()))
        assert all(same.values())
