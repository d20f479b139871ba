"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The desk-scale training criteria (6 to 9) run the real command-line pipeline
at the configured sizes, so this module takes a bit over an hour on one core.
"""
import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from locoskills import adversary, cat, cli, skills
from locoskills import diffdisc as dd
from locoskills.checkpoint import load, restore_low_level
from locoskills.config import RunConfig
from locoskills.gradcheck import check_all
from locoskills.motion import read_dataset
from locoskills.retarget import RetargetProblem, quadruped_model, retarget_sequence
from locoskills.trainer import highlevel as hl
from locoskills.trainer.lowlevel import LowLevelTrainer, alignment_scores, collect_low_level_rollout, transitions_of
from locoskills.trainer.ppo import compute_gae

SEED = 0
# the diffusion classifier costs roughly 3x a GAN update per pass; one pass and fewer
# epochs keep the run inside its time budget
DIFFUSION_OVERRIDES = {"low": {"epochs": 120, "disc": {"kind": "diffusion", "passes": 1}}}


# ---------------------------------------------------------------------------------------
# desk-scale runs, shared between criteria 6 to 9


class DeskRuns:
    def __init__(self, root: Path):
        self.root = root
        self.times = {}
        self.dataset = root / "dataset.jsonl"
        self.base_cfg = root / "desk.json"
        self.base_cfg.write_text(RunConfig(seed=SEED).to_json())
        diff = RunConfig.from_dict(DIFFUSION_OVERRIDES)
        self.diff_cfg = root / "desk_diffusion.json"
        self.diff_cfg.write_text(diff.to_json())
        assert cli.main(["--config", str(self.base_cfg), "gen-dataset", "--output", str(self.dataset)]) == 0

    def _timed(self, name, argv):
        out = self.root / name
        if name not in self.times:
            t0 = time.perf_counter()
            code = cli.main([str(a) for a in argv])
            assert code == 0, f"{name} exited with {code}"
            self.times[name] = time.perf_counter() - t0
        return out

    def low(self, name, kind="gan", use_cat=False):
        cfg = self.diff_cfg if kind == "diffusion" else self.base_cfg
        argv = ["--config", cfg, "--out", self.root / name, "train-low", "--dataset", self.dataset]
        argv.append("--cat" if use_cat else "--no-cat")
        return self._timed(name, argv)

    def high(self, name, low_dir):
        argv = ["--config", self.base_cfg, "--out", self.root / name, "train-high",
                "--low-checkpoint", Path(low_dir) / "low_final.json"]
        return self._timed(name, argv)

    def evaluate(self, high_dir, episodes=256):
        rows = Path(high_dir) / "eval.csv"
        if not rows.exists():
            argv = ["--config", self.base_cfg, "eval", Path(high_dir) / "high_final.json",
                    "--episodes", episodes, "--csv", rows]
            assert cli.main([str(a) for a in argv]) == 0
        with open(rows) as fh:
            data = list(csv.DictReader(fh))
        err = np.array([float(r["final_error"]) for r in data])
        viol = np.array([float(r["violation_frac"]) for r in data])
        return err, viol


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return DeskRuns(tmp_path_factory.mktemp("acceptance"))


def on_policy_scores(run_dir, cfg_path, dataset_path):
    """Disc score and skill alignment on a fresh rollout of the final low-level checkpoint."""
    cfg = RunConfig.from_dict(json.loads(Path(cfg_path).read_text()))
    cfg_run = RunConfig.from_dict(json.loads((Path(run_dir) / "config.json").read_text()))
    ds = read_dataset(dataset_path)
    tr = LowLevelTrainer(cfg_run.low, cfg.env, ds, cfg.seed)
    restore_low_level(load(Path(run_dir) / "low_final.json", "low-level"), tr)
    rng = np.random.default_rng(12345)
    buf = collect_low_level_rollout(tr.agent, tr.envs, tr.constraints, tr.cat, False,
                                    cfg_run.low.ppo.rollout_steps, rng)
    score = float(np.mean(tr.agent.disc.score(transitions_of(buf), rng)))
    matched, shuffled = alignment_scores(tr.agent, buf, rng)
    return score, matched, shuffled


# ---------------------------------------------------------------------------------------


def test_criterion_1_gradient_integrity(record_criterion):
    t0 = time.perf_counter()
    reports = check_all(np.random.default_rng(SEED), tolerance=1e-4, h=1e-5, hidden=(256, 128))
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 60
    refined = sum(r.refined for r in reports.values())
    record_criterion(1, ok, f"{len(reports)} networks, worst relative error {worst:.1e}, "
                            f"{refined} kink retries at smaller steps, {elapsed:.1f} s")
    assert ok


def test_criterion_2_closed_forms(record_criterion):
    tol = 1e-12
    z = skills.sample_latent(np.random.default_rng(1))
    perp = np.roll(z, 1) - (np.roll(z, 1) @ z) * z

    def enc(direction):
        from locoskills.numkit import FeedForwardNet, Layer

        return skills.SkillEncoder(FeedForwardNet([Layer(np.zeros((7, 12)), direction, "identity")]), 5.0)

    def state(p, c):
        return cat.CatState(["c"], [p], p_max=[p], c_max=[c])

    x0 = np.zeros((1, 12))
    checks = {
        "task_reward(0)": (hl.task_reward(np.zeros(2), np.zeros(2)), 1.0),
        "task_reward(0.1)": (hl.task_reward(np.array([0.1, 0.0]), np.zeros(2)), np.exp(-1.0)),
        "task_reward(ln2/10)": (hl.task_reward(np.array([np.log(2) / 10, 0.0]), np.zeros(2)), 0.5),
        "gan_reward(0.5)": (adversary.imitation_reward(0.5), np.log(2.0)),
        "gan_reward(0)": (adversary.imitation_reward(0.0), 0.0),
        "delta(c<=0)": (cat.delta(state(0.2, 1.0), np.array([0.0])), 0.0),
        "delta(c=cmax)": (cat.delta(state(0.2, 1.7), np.array([1.7])), 0.2),
        "delta(c=cmax/2)": (cat.delta(state(0.1, 2.0), np.array([1.0])), 0.05),
        "project([3,4,0...])[0]": (skills.project_latent([3, 4, 0, 0, 0, 0, 0])[0], 0.6),
        "project([3,4,0...])[1]": (skills.project_latent([3, 4, 0, 0, 0, 0, 0])[1], 0.8),
        "D_z(z,z)": (skills.latent_distance(z, z), 0.0),
        "D_z(z,-z)": (skills.latent_distance(z, -z), 1.0),
        "skill_reward(mu=z)": (skills.skill_reward(enc(z), x0, z)[0], 5.0),
        "skill_reward(mu=-z)": (skills.skill_reward(enc(-z), x0, z)[0], -5.0),
        "skill_reward(mu perp z)": (skills.skill_reward(enc(perp / np.linalg.norm(perp)), x0, z)[0], 0.0),
        "discount(0)": (cat.effective_discount(0.0, 0.99), 0.99),
        "discount(1)": (cat.effective_discount(1.0, 0.99), 0.0),
        "discount(0.2)": (cat.effective_discount(0.2, 0.99), 0.792),
        "pmax(0)": (cat.pmax_at(0.2, 0, 100), 0.0),
        "pmax(total)": (cat.pmax_at(0.2, 100, 100), 0.2),
        "pmax(0.85 total)": (cat.pmax_at(0.2, 85, 100), 0.1),
    }
    # the reward clamp keeps D = 0 a hair above zero: -log(1 - 1e-7)
    gan0 = checks.pop("gan_reward(0)")[0]
    bad = {k: (float(a), b) for k, (a, b) in checks.items() if abs(float(a) - b) > tol}
    ok = not bad and 0.0 < gan0 < 1.0000001e-7
    record_criterion(2, ok, f"{len(checks) + 1} closed-form examples" + (f", mismatches {bad}" if bad else ""))
    assert ok


def brute_force_returns(r, v, last, disc, lam):
    T = len(r)
    vals = np.append(v, last)
    td = [r[t] + disc[t] * vals[t + 1] - vals[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        w = 1.0
        for u in range(t, T):
            adv[t] += w * td[u]
            w *= disc[u] * lam
    return adv + v


def test_criterion_3_cat_equivalence(record_criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 65))
        r, v, last = rng.normal(size=(T, 1)), rng.normal(size=(T, 1)), rng.normal(size=1)
        dones = (rng.uniform(size=(T, 1)) < 0.05).astype(float)
        _, ret = compute_gae(r, v, last, np.zeros((T, 1)), dones, 0.99, 0.95)
        expect = brute_force_returns(r[:, 0], v[:, 0], last[0], 0.99 * (1 - dones[:, 0]), 0.95)
        worst = max(worst, float(np.max(np.abs(ret[:, 0] - expect))))
        # lambda = 1 turns GAE into the plain discounted sum of rewards
        _, ret1 = compute_gae(r, np.zeros((T, 1)), np.zeros(1), None, None, 0.99, 1.0)
        plain = [sum(0.99 ** (u - t) * r[u, 0] for u in range(t, T)) for t in range(T)]
        worst = max(worst, float(np.max(np.abs(ret1[:, 0] - plain))))

    zero_cat = {"enabled": True, "constraints": {"base_accel": {"limit": 2.5, "final_pmax": 0.0,
                                                                "ramp_start_fraction": 0.7}}}
    files = []
    for name, low in (("off", {"epochs": 10}), ("zero", {"epochs": 10, "cat": zero_cat})):
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps({"seed": SEED, "low": low}))
        assert cli.main(["--config", str(cfg), "--out", str(tmp_path / name), "train-low"]) == 0
        files.append((tmp_path / name / "metrics.csv").read_bytes())
    elapsed = time.perf_counter() - t0
    identical = files[0] == files[1]
    ok = worst <= 1e-12 and identical and elapsed < 300
    record_criterion(3, ok, f"GAE max deviation {worst:.1e} over 1000 sequences; p_max=0 metrics "
                            f"{'identical' if identical else 'DIFFERENT'}; {elapsed:.0f} s")
    assert ok


def test_criterion_4_diffusion_symmetry(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    n = 10_000
    x = rng.normal(size=(n, 12))
    blind = dd.DiffusionDiscriminator.build(12, (256, 256), rng=rng)
    blind.net.layers[0].weight[:, -2:] = 0.0
    half = dd.diffusion_discriminate(blind, x, rng)
    d = dd.DiffusionDiscriminator.build(12, (256, 256), rng=rng)
    noise = d.sample_noise(n, rng)
    p = dd.diffusion_discriminate(d, x, noise=noise)
    d.label_dataset, d.label_policy = d.label_policy, d.label_dataset
    q = dd.diffusion_discriminate(d, x, noise=noise)
    dev = float(np.max(np.abs(p + q - 1.0)))
    elapsed = time.perf_counter() - t0
    ok = np.all(half == 0.5) and dev <= 1e-12 and elapsed < 60
    record_criterion(4, ok, f"label-blind D == 0.5 on {n} rows: {bool(np.all(half == 0.5))}; "
                            f"swap complement deviation {dev:.1e}; {elapsed:.1f} s")
    assert ok


def test_criterion_5_retarget_round_trip(record_criterion):
    t0 = time.perf_counter()
    model = quadruped_model()
    problem = RetargetProblem(model, {f: f for f in model.frame_names}, alpha=0.0)
    rng = np.random.default_rng(SEED)
    t = np.linspace(0.0, 4.0, 200)[:, None]
    amp = rng.uniform(0.05, 0.3, model.dof)
    freq = rng.uniform(0.3, 1.0, model.dof)
    Q = model.neutral() + amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi, model.dof))
    Q[:, 0] += 0.5 * t[:, 0]
    targets = np.stack([model.forward_kinematics(q) for q in Q])
    _, reports = retarget_sequence(problem, targets, Q[0] + 0.05)
    rms = float(np.sqrt(np.mean([r.keypoint_rms ** 2 for r in reports])))
    monotone = all(all(b <= a for a, b in zip(r.cost_history, r.cost_history[1:])) for r in reports)
    elapsed = time.perf_counter() - t0
    ok = rms < 1e-6 and monotone and elapsed < 120
    record_criterion(5, ok, f"{model.dof}-dof quadruped, 200 frames: RMS residual {rms:.1e}, "
                            f"objective monotone on every frame: {monotone}; {elapsed:.1f} s")
    assert ok


def test_criterion_6_low_level_training(record_criterion, desk):
    lines, ok = [], True
    for kind, cfg in (("gan", desk.base_cfg), ("diffusion", desk.diff_cfg)):
        out = desk.low(kind, kind)
        score, matched, shuffled = on_policy_scores(out, cfg, desk.dataset)
        minutes = desk.times[kind] / 60
        good = score >= 0.3 and matched >= 2 * shuffled and matched > 0 and minutes <= 15
        ok &= good
        lines.append(f"{kind}: D(policy) {score:.3f}, alignment {matched:.2f} vs shuffled {shuffled:.2f}, "
                     f"{minutes:.1f} min")
    record_criterion(6, ok, "; ".join(lines))
    assert ok


def test_criterion_7_high_level_training(record_criterion, desk):
    out = desk.high("high_gan", desk.low("gan"))
    err, _ = desk.evaluate(out)
    success = float(np.mean(err <= 0.1))
    minutes = desk.times["high_gan"] / 60
    ok = success >= 0.8 and minutes <= 15
    record_criterion(7, ok, f"success {100 * success:.1f} % of {len(err)} episodes (error <= 0.1), "
                            f"mean error {np.mean(err):.3f}, {minutes:.1f} min")
    assert ok


def test_criterion_8_cat_reduces_violations(record_criterion, desk):
    base_low = desk.low("gan")
    base_high = desk.high("high_gan", base_low)
    cat_low = desk.low("cat", use_cat=True)
    cat_high = desk.high("high_cat", cat_low)
    _, viol_base = desk.evaluate(base_high)
    err_cat, viol_cat = desk.evaluate(cat_high)
    vb, vc = 100 * float(np.mean(viol_base)), 100 * float(np.mean(viol_cat))
    success = float(np.mean(err_cat <= 0.1))
    minutes = sum(desk.times[k] for k in ("gan", "high_gan", "cat", "high_cat")) / 60
    reduced = vc <= 0.5 * vb and vb > 0
    ok = reduced and success >= 0.8 and minutes <= 45
    record_criterion(8, ok, f"violation {vb:.4f} % without CaT vs {vc:.4f} % with CaT "
                            f"({100 * (1 - vc / vb) if vb else 0:.0f} % reduction); CaT success "
                            f"{100 * success:.1f} %; {minutes:.1f} min total")
    assert ok


def test_criterion_9_determinism(record_criterion, desk):
    pairs = [
        ("gan", desk.low("gan"), desk.low("gan_repeat")),
        ("diffusion", desk.low("diffusion", "diffusion"), desk.low("diffusion_repeat", "diffusion")),
        ("cat", desk.low("cat", use_cat=True), desk.low("cat_repeat", use_cat=True)),
    ]
    pairs.append(("high_gan", desk.high("high_gan", desk.low("gan")), desk.high("high_gan_repeat", pairs[0][2])))
    pairs.append(("high_cat", desk.high("high_cat", desk.low("cat", use_cat=True)),
                  desk.high("high_cat_repeat", pairs[2][2])))
    same = {name: (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes() for name, a, b in pairs}
    ok = all(same.values())
    record_criterion(9, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
