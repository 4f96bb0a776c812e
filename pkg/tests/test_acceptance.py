"""Acceptance criteria, one test each.  Run with ``-rA`` or read the summary section
printed at the end of the session for one PASS/FAIL line per criterion."""
import math
import time

import numpy as np
import pytest

from crdnav import diffcore as D
from crdnav import evalkit as E
from crdnav import latent as L
from crdnav import policy as P
from crdnav import vision as V
from crdnav.diffcore import Tensor
from crdnav.presets import preset
from crdnav.trainer import ABLATION_MASKS, Trainer, load_checkpoint, run_ablation, save_checkpoint, train
from crdnav.world.sim import RewardConfig, reward

LAYOUT = L.LatentLayout(4, 4, 8)
NET = L.NetConfig(16, (4, 4), 16)
GRAD_TOL = 1e-4


def _agent(seed=0, **kw):
    sac = P.SACConfig(batch_size=4, hidden=16, **kw)
    return P.SACAgent(P.AgentConfig(layout=LAYOUT, net=NET, sac=sac), np.random.default_rng(seed))


def _images(b, seed):
    return np.random.default_rng(seed).uniform(0.05, 0.95, (b, 16, 16))


def _check(loss_fn, params, per_param=30):
    return D.gradient_check_params(loss_fn, params, h=1e-6, per_param=per_param, rng=np.random.default_rng(0))


# -- 1. gradient oracles -----------------------------------------------------------------------
def test_gradient_oracles(acceptance):
    t0 = time.time()
    agent = _agent()
    enc, dec = agent.encoder, agent.decoder
    x = _images(4, 1)
    eps = np.random.default_rng(2).standard_normal((4, LAYOUT.total))
    x_aug = V.intervene_batch(x * 20.0, V.InterventionConfig(), np.random.default_rng(3), 20.0) / 20.0
    errs = {}

    def l_vae():
        out = L.encode(enc, x, eps=eps)
        return L.loss_vae(x, L.decode(dec, out.z), out)
    errs["vae"] = _check(l_vae, enc.parameters() + dec.parameters())

    def l_rec():
        out = L.encode(enc, x, eps=eps)
        return L.loss_rec(out.h, out.h_rec)
    errs["rec"] = _check(l_rec, enc.parameters())

    def l_align():
        w = L.LossWeights(0.0, 0.0, 1.0)
        return L.representation_losses(enc, dec, x, x_aug, w, eps)[0]
    errs["align"] = _check(l_align, enc.parameters())

    rng = np.random.default_rng(4)
    act = rng.uniform(-1, 1, (4, 3))
    goal, vel = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    target = rng.normal(size=4)

    def l_q():
        out = L.encode(enc, x, eps=eps)
        return P.critic_loss(agent.critic, agent.view(out.z, goal, vel), Tensor(act), target)
    errs["critic"] = _check(l_q, agent.critic.parameters() + enc.parameters())

    z = L.encode(enc, x, eps=eps).z.data
    obs = agent.view(z, goal, vel)
    a_eps = rng.standard_normal((4, 3))

    def l_pi():
        return P.actor_loss(agent.actor, obs, agent.critic.min_q, 0.1, a_eps)[0]
    errs["actor"] = _check(l_pi, agent.actor.parameters())

    lp = rng.normal(size=4)
    errs["temperature"] = _check(lambda: P.temperature_loss(agent.log_alpha, lp, -3.0), [agent.log_alpha])
    elapsed = time.time() - t0
    acceptance(f"max rel err {max(errs.values()):.2e} ({', '.join(f'{k}={v:.1e}' for k, v in errs.items())}); "
               f"{elapsed:.0f}s")
    assert max(errs.values()) < GRAD_TOL
    assert elapsed < 120


# -- 2. Fourier invariants ---------------------------------------------------------------------
def _naive_dft2(x):
    h, w = x.shape
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    out = np.empty((h, w), dtype=complex)
    for k in range(h):
        for m in range(w):
            out[k, m] = np.sum(x * np.outer(fh[k], fw[m]))
    return out


def test_fourier_invariants(acceptance):
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = {"round_trip": 0.0, "phase": 0.0, "identity": 0.0, "dft": 0.0}
    for n in (8, 16):
        for _ in range(5):
            img = V.DepthImage(rng.uniform(0.0, 20.0, (n, n)))
            spec = V.fft2(img)
            ref = _naive_dft2(img.data)
            worst["dft"] = max(worst["dft"], np.max(np.abs(spec.amplitude * np.exp(1j * spec.phase) - ref))
                               / np.max(np.abs(ref)))
            worst["round_trip"] = max(worst["round_trip"], np.max(np.abs(V.ifft2(spec).data - img.data)))
            lam = rng.uniform(0.5, 1.5)
            raw, _ = V.amplitude_perturb_raw(img.data, lam)
            after = _naive_dft2(raw)
            mask = np.abs(ref) > 1e-9
            d = np.angle(after[mask] / ref[mask])
            worst["phase"] = max(worst["phase"], float(np.max(np.abs(d))))
            np.testing.assert_allclose(np.abs(after), lam * np.abs(ref), rtol=1e-9, atol=1e-9)
            same = V.amplitude_perturb(img, 1.0)
            worst["identity"] = max(worst["identity"], np.max(np.abs(same.data - img.data)))
    elapsed = time.time() - t0
    acceptance(", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s")
    assert worst["round_trip"] < 1e-9 and worst["identity"] < 1e-9 and worst["dft"] < 1e-12
    assert worst["phase"] < 1e-6
    assert elapsed < 10


# -- 3. reward table ------------------------------------------------------------------------------
REWARD_CASES = [
    # (d_t, d_prev, d_min, crashed, expected)
    (0.4, 0.6, 10.0, False, 50.0),                   # arrival strictly inside the threshold
    (0.5, 0.7, 10.0, False, 3.0 * (0.7 - 0.5)),      # threshold itself is not arrival
    (2.0, 2.5, 10.0, False, 1.5),                    # approaching: positive progress
    (2.5, 2.0, 10.0, False, -1.5),                   # retreating: negative progress
    (3.0, 3.0, 5.0, False, 0.0),                     # d_min == d_safe: avoidance term 0
    (3.0, 3.0, 3.0, False, -0.1),                    # 2 m inside d_safe: -0.05 * 2
    (3.0, 3.0, 8.0, False, 0.0),                     # far from everything
    (3.0, 3.2, 0.1, True, 3.0 * 0.2 - 10.0),         # crash replaces the avoidance term
    (0.3, 0.6, 0.1, True, 3.0 * 0.3 - 10.0),         # crash inside the threshold is not arrival
]


def test_reward_table(acceptance):
    cfg = RewardConfig()
    got = [reward(d, p, m, c, cfg=cfg) for d, p, m, c, _ in REWARD_CASES]
    want = [e for *_, e in REWARD_CASES]
    ok = [g == pytest.approx(w, abs=1e-12) for g, w in zip(got, want)]
    acceptance(f"{sum(ok)}/9 cases exact")
    assert (cfg.r_arrival, cfg.r_collision, cfg.alpha_goal, cfg.alpha_avoid, cfg.d_safe, cfg.arrival_threshold) == \
        (50.0, -10.0, 3.0, -0.05, 5.0, 0.5)
    assert all(ok), list(zip(got, want))


# -- 4. metric table ---------------------------------------------------------------------------------
def test_metric_table(acceptance):
    r = lambda s, l, p, c=False: E.EpisodeRecord(s, l, p, 10, 1.0, c)
    checks = [
        E.spl([r(1, 10, 10)]) == 100.0,
        E.spl([r(0, 10, 10)]) == 0.0,
        E.spl([r(1, 10, 12.5)]) == pytest.approx(80.0, abs=1e-12),
        E.success_rate([r(1, 5, 5), r(1, 5, 6), r(1, 5, 7), r(0, 5, 2, True)]) == 75.0,
        E.extra_distance([r(1, 10, 11), r(1, 10, 13)]) == (2.0, 1.0),
    ]
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        recs = [r(int(rng.integers(0, 2)), float(rng.uniform(0.1, 50)), float(rng.uniform(0, 120))) for _ in range(n)]
        violations += E.spl(recs) > E.success_rate(recs) + 1e-9
    acceptance(f"{sum(checks)}/5 arithmetic cases; SPL<=SR violations {violations}/1000")
    assert all(checks) and violations == 0


# -- 5. causal filtering -------------------------------------------------------------------------------
def test_causal_filtering(acceptance):
    agent = _agent(seed=1)
    rng = np.random.default_rng(0)
    lay = agent.layout
    lo, hi = lay.block_range("z1")
    z = rng.normal(size=(6, lay.total))
    goal, vel = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    act = rng.uniform(-1, 1, (6, 3))

    def outputs(zz):
        obs = agent.view(zz, goal, vel)
        mu, _ = agent.actor(obs)
        return np.tanh(mu.data), [q.data for q in agent.critic(obs, Tensor(act))]

    a0, q0 = outputs(z)
    unchanged = True
    for scale in (1e-3, 1.0, 1e6):
        z2 = z.copy()
        z2[:, lo:hi] = rng.normal(scale=scale, size=(6, hi - lo))
        a1, q1 = outputs(z2)
        unchanged &= np.array_equal(a0, a1) and all(np.array_equal(u, v) for u, v in zip(q0, q1))

    # alignment gradient on latent coordinates
    zt = Tensor(z, requires_grad=True)
    zaug = Tensor(rng.normal(size=(4, 6, lay.total)), requires_grad=True)
    z3 = lay.split(zt)[2]
    blocks = [lay.split(D.reshape(D.take_slice(zaug, 0, i, i + 1), (6, lay.total)))[2] for i in range(4)]
    L.loss_align(z3, blocks).backward()
    g = zt.grad
    r1, r2, r3 = lay.block_range("z1"), lay.block_range("z2"), lay.block_range("z3")
    zero_12 = not np.any(g[:, r1[0]:r2[1]]) and not np.any(zaug.grad[:, :, r1[0]:r2[1]])

    # and through the real encoder: bottleneck rows producing z1, z2 get no alignment gradient
    x = _images(3, 5)
    x_aug = V.intervene_batch(x * 20.0, V.InterventionConfig(), rng, 20.0) / 20.0
    eps = rng.standard_normal((3, lay.total))
    agent.encoder.zero_grad()
    L.representation_losses(agent.encoder, agent.decoder, x, x_aug, L.LossWeights(0.0, 0.0, 1.0), eps)[0].backward()
    w = agent.encoder.to_stats.weight.grad
    n = lay.total
    enc_zero = not np.any(w[:, :r2[1]]) and not np.any(w[:, n:n + r2[1]]) and np.any(w[:, r3[0]:r3[1]])
    acceptance(f"z1 perturbation leaves actions/Q exact: {unchanged}; dL_align/dz1,dz2 == 0: {zero_12}; "
               f"encoder bottleneck rows for z1,z2 untouched: {enc_zero}")
    assert unchanged and zero_12 and enc_zero
    assert np.any(g[:, r3[0]:r3[1]])


# -- 6. determinism -----------------------------------------------------------------------------------
def test_determinism_smoke(acceptance, tmp_path):
    t0 = time.time()
    cfg = preset("smoke", train__seed=11)
    assert (cfg.train.num_uavs, cfg.train.max_episodes, cfg.train.updates_per_episode, cfg.sensor.height) == \
        (2, 5, 50, 32)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    same_log = (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    same_ck = (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    elapsed = time.time() - t0
    acceptance(f"log identical {same_log}, checkpoint identical {same_ck}; {elapsed:.0f}s")
    assert same_log and same_ck
    assert elapsed < 600


# -- 7. learning sanity -------------------------------------------------------------------------------
def test_learning_sanity(acceptance):
    t0 = time.time()
    cfg = preset("sanity")
    assert cfg.train.num_uavs == 1 and cfg.train.obstacle_density == 0.0 and cfg.train.init_pattern == "random"
    assert cfg.train.max_episodes <= 150
    log, tr = train(cfg)
    rep = E.evaluate_agent(tr.agent, "playground", "random", 1, 50, seed=12345,
                           episode_cfg=tr.episode_cfg, reward_cfg=cfg.reward, obstacle_density=0.0)
    elapsed = time.time() - t0
    acceptance(f"success {rep.success_rate:.0f}% (SPL {rep.spl:.0f}%) after {len(log)} episodes; {elapsed / 60:.1f} min")
    assert rep.success_rate >= 90.0
    assert elapsed <= 3600


# -- 8. generalization direction ------------------------------------------------------------------------
@pytest.mark.slow
def test_generalization_direction(acceptance):
    from crdnav.trainer import run_transfer
    t0 = time.time()

    def progress(name, seed, rep):
        print(f"  {name} seed {seed}: forest success {rep.success_rate:.1f}% "
              f"after {(time.time() - t0) / 60:.0f} min", flush=True)

    result = run_transfer(preset("transfer"), seeds=range(5), eval_scenario="forest", eval_episodes=100,
                          progress=progress)
    full, base = np.mean(result["full"]), np.mean(result["baseline"])
    elapsed = time.time() - t0
    acceptance(f"forest success full {full:.1f}% vs baseline {base:.1f}% "
               f"(per seed {result['full']} vs {result['baseline']}); {elapsed / 3600:.1f} h")
    assert full >= base
    assert elapsed <= 12 * 3600


# -- 9. ablation harness --------------------------------------------------------------------------------
def test_ablation_shape(acceptance):
    t0 = time.time()
    rows = run_ablation(preset("smoke"), eval_episodes=2)
    widths = [r.input_width for r in rows]
    n = preset("smoke").layout()
    want = [n.n2 + n.n3 + 6, n.n2 + 6, n.n3 + 6, n.total + 6]
    elapsed = time.time() - t0
    acceptance(f"{len(rows)} rows, masks {[r.mask for r in rows]}, widths {widths}; {elapsed / 60:.1f} min")
    assert [r.mask for r in rows] == list(ABLATION_MASKS)
    assert widths == want
    assert elapsed < 1200


# -- 10. checkpoint round trip ------------------------------------------------------------------------------
def test_checkpoint_round_trip(acceptance, tmp_path):
    cfg = preset("smoke", train__max_episodes=2)
    tr = Trainer(cfg)
    tr.train_episode()
    save_checkpoint(tr, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    tr.run_updates(5)
    back.run_updates(5)
    a = [p.data for _, p in tr.agent.named_parameters()]
    b = [p.data for _, p in back.agent.named_parameters()]
    same = all(np.array_equal(x, y) for x, y in zip(a, b))
    moments = all(np.array_equal(m1, m2) for o1, o2 in zip(tr.agent.optimizers().values(),
                                                          back.agent.optimizers().values())
                  for m1, m2 in zip(o1.state.m + o1.state.v, o2.state.m + o2.state.v))
    acceptance(f"parameters identical after 5 updates: {same}; optimizer moments identical: {moments}")
    assert same and moments
