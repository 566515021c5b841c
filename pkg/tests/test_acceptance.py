"""Acceptance gate: each test maps to one numbered criterion and reports its measurements.

A summary line per criterion (PASS/FAIL plus the measured values) is printed
at the end of the pytest run.
"""

import json
import time

import numpy as np
import pytest

from lkmn import blocks, ops
from lkmn.blocks import BlockConfig
from lkmn.cli import main as cli_main
from lkmn.data import PairedDataset, bicubic_resize, synthetic_images
from lkmn.imageio import ImageBuffer, array_to_image, from_tensor, load_png, save_png, to_tensor
from lkmn.losses import fft_loss, l1_loss, sr_loss
from lkmn.metrics import psnr, rgb_to_y, ssim
from lkmn.model import ModelConfig, build, count_flops, count_params, forward, preset
from lkmn.ops import ConvParams
from lkmn.optim import AdanState, adan_step, cosine_lr
from lkmn.tensor import Tensor, backward, no_grad
from lkmn.train import TrainConfig, train_loop
from lkmn.weights import decode_weights, encode_weights, load_weights, save_weights

from gradcheck import TOL, leaf, max_grad_error, projected
from oracles import adan_ref, cosine_ref, direct_dft2, naive_conv2d, psnr_ref, ssim_ref

# -- 1. complexity ------------------------------------------------------------------------

PUBLISHED = {
    # preset: (params, FLOPs at 1280x720 output)
    "lkmn-x2": (206e3, 46e9),
    "lkmn-x3": (211e3, 21e9),
    "lkmn-x4": (218e3, 12.2e9),
    "lkmn-l-x2": (889e3, 201e9),
    "lkmn-l-x3": (897e3, 90.1e9),
    "lkmn-l-x4": (909e3, 51.4e9),
}


@pytest.mark.acceptance(1, "complexity oracle: params within 5%, FLOPs within 10% of the published tables")
def test_complexity_oracle(report):
    failures = []
    for name, (p_ref, f_ref) in PUBLISHED.items():
        cfg = preset(name)
        p, f = count_params(cfg), count_flops(cfg, 720, 1280)
        dp, df = p / p_ref - 1, f / f_ref - 1
        report(f"{name} {p / 1e3:.1f}K ({dp:+.1%}) {f / 1e9:.2f}G ({df:+.1%})")
        if abs(dp) > 0.05 or abs(df) > 0.10:
            failures.append(name)
    assert not failures


# -- 2. gradients ------------------------------------------------------------------------------


def _op_cases():
    r = np.random.default_rng(0)
    x = lambda *s: leaf(r, s)  # noqa: E731
    yield "conv2d", lambda a, w, b: projected(ops.conv2d(a, ConvParams(w, b, 1, (1, 1), 2))), [x(2, 4, 5, 6), x(6, 2, 3, 3), x(6)]
    yield "conv2d_stride", lambda a, w: projected(ops.conv2d(a, ConvParams(w, None, 2, (1, 0), 1))), [x(1, 3, 6, 5), x(2, 3, 3, 3)]
    yield "strip_h", lambda a, k: projected(ops.strip_dwconv(a, ConvParams(k, groups=4), "horizontal")), [x(1, 4, 5, 6), x(4, 1, 1, 5)]
    yield "strip_v", lambda a, k: projected(ops.strip_dwconv(a, ConvParams(k, groups=4), "vertical")), [x(1, 4, 6, 5), x(4, 1, 5, 1)]
    yield "channel_shuffle", lambda a: projected(ops.channel_shuffle(a, 4)), [x(2, 8, 3, 3)]
    yield "channel_split", lambda a: projected(ops.channel_split(a, 3)[1]), [x(1, 8, 3, 4)]
    yield "concat", lambda a, b: projected(ops.concat_channels([a, b, a])), [x(1, 2, 3, 3), x(1, 3, 3, 3)]
    yield "global_avg_pool", lambda a: projected(ops.global_avg_pool(a)), [x(2, 5, 4, 6)]
    for kind in ("gelu", "relu", "sigmoid"):
        yield kind, lambda a, k=kind: projected(ops.activation(a, k)), [x(2, 3, 4, 5)]
    yield "pixel_shuffle", lambda a: projected(ops.pixel_shuffle(a, 2)), [x(1, 8, 3, 4)]
    yield "fft2", lambda a: ops.add(projected(ops.fft2(a)[0], 2), projected(ops.fft2(a)[1], 3)), [x(2, 2, 5, 6)]
    yield "add/sub/mul", lambda a, b: projected(ops.mul(ops.sub(a, b), ops.add(a, b))), [x(1, 3, 4, 4), x(1, 3, 1, 1)]
    yield "scale_channels", lambda a, v: projected(ops.scale_channels(a, v)), [x(2, 6, 3, 3), x(6)]
    yield "abs/mean", lambda a: ops.mean(ops.abs_(a)), [x(1, 3, 5, 5)]
    gt = Tensor(r.random((1, 3, 6, 5)))
    yield "l1_loss", lambda a: l1_loss(a, gt), [x(1, 3, 6, 5)]
    yield "fft_loss", lambda a: fft_loss(a, gt), [x(1, 3, 6, 5)]
    yield "sr_loss", lambda a: sr_loss(a, gt)[0], [x(1, 3, 6, 5)]


SMALL_BLOCK = BlockConfig(channels=8, shuffle_group=4, kernel_size=5, distill_channels=4)


def _block_case(name, shapes_fn, fwd, seed):
    r = np.random.default_rng(seed)
    shapes = shapes_fn(SMALL_BLOCK)
    names = sorted(shapes)
    params = [Tensor(r.uniform(-0.5, 0.5, shapes[k]), requires_grad=True) for k in names]
    for k, t in zip(names, params):
        if k.endswith("gamma"):
            t.data[:] = r.uniform(0.2, 1.0, t.shape)
    x = Tensor(r.standard_normal((1, 8, 6, 6)), requires_grad=True)

    def fn(x, *ps):
        return projected(fwd(x, dict(zip(names, ps)), SMALL_BLOCK))

    return fn, [x, *params]


@pytest.mark.acceptance(2, "gradient suite: every op, block and a toy model pass float64 central differences, rel err < 1e-4")
def test_gradient_suite(report):
    t0 = time.perf_counter()
    errors = {}
    for name, fn, inputs in _op_cases():
        errors[name] = max_grad_error(fn, inputs, max_entries=48)
    for i, (name, shapes_fn, fwd) in enumerate([
        ("EPLKB", blocks.eplkb_shapes, blocks.eplkb_forward),
        ("HFAB", blocks.hfab_shapes, blocks.hfab_forward),
        ("HFDB", blocks.hfdb_shapes, blocks.hfdb_forward),
        ("CGFN", blocks.cgfn_shapes, blocks.cgfn_forward),
        ("RFMG", blocks.rfmg_shapes, blocks.rfmg_forward),
    ]):
        fn, inputs = _block_case(name, shapes_fn, fwd, 10 + i)
        errors[name] = max_grad_error(fn, inputs, max_entries=8)

    cfg = ModelConfig(scale=2, channels=8, num_rfmg=2, shuffle_group=4, kernel_size=5)
    model, ws = build(cfg, seed=1, dtype=np.float64)
    names = list(ws.keys())
    # Init-scale weights give attention gradients near 1e-8 (below the difference
    # round-off floor) and zero biases park ReLU inputs on the kink; use O(1) weights.
    r = np.random.default_rng(3)
    for k in names:
        ws[k].data[:] = r.uniform(-0.5, 0.5, ws[k].shape)
    x = Tensor(np.random.default_rng(2).random((1, 3, 6, 6)), requires_grad=True)

    def model_loss(x, *ps):
        return projected(forward(type(model)(cfg, type(ws)(dict(zip(names, ps)), cfg.to_dict())), x))

    errors["full model"] = max_grad_error(model_loss, [x, *[ws[k] for k in names]], max_entries=4)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    report(f"{len(errors)} cases, worst {worst} {errors[worst]:.2e}, {elapsed:.1f}s")
    assert all(e < TOL for e in errors.values()), {k: v for k, v in errors.items() if v >= TOL}
    assert elapsed < 120


# -- 3. oracle equivalence ----------------------------------------------------------------------------

N_INSTANCES = 100


@pytest.mark.acceptance(3, "oracle equivalence on >= 100 random instances per function")
def test_oracle_equivalence(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(42)
    worst = {}

    def track(name, value):
        worst[name] = max(worst.get(name, 0.0), value)

    for _ in range(N_INSTANCES):
        g = int(r.choice([1, 2]))
        cin, cout = g * int(r.integers(1, 3)), g * int(r.integers(1, 3))
        h, w = int(r.integers(3, 9)), int(r.integers(3, 9))
        k, pad, stride = int(r.choice([1, 3])), int(r.integers(0, 2)), int(r.integers(1, 3))
        x = r.standard_normal((int(r.integers(1, 3)), cin, h, w)).astype(np.float32)
        wt = r.standard_normal((cout, cin // g, k, k)).astype(np.float32)
        b = r.standard_normal(cout).astype(np.float32)
        got = ops.conv2d(Tensor(x), ConvParams(Tensor(wt), Tensor(b), stride, (pad, pad), g)).data
        track("conv2d", np.max(np.abs(got - naive_conv2d(x, wt, b, stride, (pad, pad), g))))

        c, ks = int(r.integers(1, 4)), int(r.choice([1, 3, 5, 7]))
        xs = r.standard_normal((1, c, h, w)).astype(np.float32)
        kh = r.standard_normal((c, 1, 1, ks)).astype(np.float32)
        kv = r.standard_normal((c, 1, ks, 1)).astype(np.float32)
        y = ops.strip_dwconv(Tensor(xs), ConvParams(Tensor(kh), groups=c), "horizontal")
        y = ops.strip_dwconv(y, ConvParams(Tensor(kv), groups=c), "vertical").data
        ref = naive_conv2d(naive_conv2d(xs, kh, padding=(0, ks // 2), groups=c), kv, padding=(ks // 2, 0), groups=c)
        track("strip_dwconv", np.max(np.abs(y - ref)))

        plane = r.standard_normal((h, w))
        re, im = ops.fft2(Tensor(plane[None, None]))
        spec = direct_dft2(plane)
        track("fft2", max(np.max(np.abs(re.data[0, 0] - spec.real)), np.max(np.abs(im.data[0, 0] - spec.imag))))

        a8 = r.integers(0, 256, (12, 12)).astype(np.float64)
        b8 = np.clip(a8 + r.integers(-20, 21, a8.shape), 0, 255)
        track("psnr", abs(psnr(a8, b8) - psnr_ref(a8, b8)))
        sa = r.integers(0, 256, (int(r.integers(11, 16)), int(r.integers(11, 16)))).astype(np.float64)
        sb = np.clip(sa + r.normal(0, r.uniform(1, 40), sa.shape), 0, 255)
        track("ssim", abs(ssim(sa, sb) - ssim_ref(sa, sb)))

        total = int(r.integers(1, 10_000))
        step = int(r.integers(0, total + 1))
        lo, hi = sorted(r.uniform(1e-7, 1e-1, 2))
        track("cosine_lr", abs(cosine_lr(step, total, hi, lo) - cosine_ref(step, total, hi, lo)) / hi)

        dim = int(r.integers(1, 5))
        curv = r.uniform(0.5, 20, dim)
        x0 = r.uniform(-2, 2, dim)
        lr = float(r.uniform(1e-3, 0.2))
        p = {"x": Tensor(x0.copy(), requires_grad=True)}
        state = AdanState()
        traj = []
        for _ in range(20):
            adan_step(p, state, lr, {"x": 2 * curv * p["x"].data})
            traj.append(p["x"].data.copy())
        ref = adan_ref(lambda v: 2 * curv * v, x0, lr, 20)
        track("adan", np.max(np.abs(np.array(traj) - ref)))

    tolerances = {"conv2d": 1e-5, "strip_dwconv": 1e-4, "fft2": 1e-4, "psnr": 1e-9, "ssim": 1e-9,
                  "cosine_lr": 1e-12, "adan": 1e-9}
    elapsed = time.perf_counter() - t0
    report(", ".join(f"{k} {v:.1e}/{tolerances[k]:.0e}" for k, v in worst.items()) + f"; {elapsed:.1f}s")
    for name, tol in tolerances.items():
        assert worst[name] <= tol, name
    assert elapsed < 60


# -- 4. overfit smoke test -------------------------------------------------------------------------------

SMOKE_MODEL = ModelConfig(scale=2, channels=16, num_rfmg=2, shuffle_group=4, kernel_size=31)
SMOKE_TRAIN = TrainConfig(iterations=300, batch=8, lr_patch=48, lr_init=5e-3, lr_min=1e-6,
                          fft_weight=0.05, l1_weight=1.0, seed=0, scale=2)


def _y_psnr(sr: np.ndarray, hr: np.ndarray, border: int) -> float:
    return psnr(rgb_to_y(array_to_image(sr).pixels), rgb_to_y(array_to_image(hr).pixels), border)


@pytest.mark.acceptance(4, "overfit smoke test: training L1 < 50% of initial and Y-PSNR >= bicubic + 1 dB")
def test_overfit_smoke(report, tmp_path, capsys):
    hr_dir = tmp_path / "HR"
    for i, img in enumerate(synthetic_images(8, 96, seed=0)):
        save_png(array_to_image(img), hr_dir / f"patch{i}.png")
    ds = PairedDataset.from_directory(hr_dir, 2)
    lr = Tensor(np.stack([p.lr for p in ds.pairs]))
    hr = np.stack([p.hr for p in ds.pairs])
    assert lr.shape == (8, 3, 48, 48)

    model, ws = build(SMOKE_MODEL, seed=0)
    with no_grad():
        l1_before = l1_loss(model(lr), Tensor(hr)).item()
    t0 = time.perf_counter()
    result = train_loop(model, ds, SMOKE_TRAIN)
    elapsed = time.perf_counter() - t0
    with no_grad():
        sr = model(lr).data
    l1_after = l1_loss(Tensor(sr), Tensor(hr)).item()

    border = 2
    bic = bicubic_resize(lr.data, 96, 96)
    model_psnr = float(np.mean([_y_psnr(sr[i], hr[i], border) for i in range(8)]))
    bic_psnr = float(np.mean([_y_psnr(bic[i], hr[i], border) for i in range(8)]))

    # the same comparison through the command line
    save_weights(ws, tmp_path / "smoke.lkmn")
    assert cli_main(["eval", "--hr", str(hr_dir), "--weights", str(tmp_path / "smoke.lkmn")]) == 0
    cli_model = json.loads(capsys.readouterr().out)["mean"]["psnr_db"]
    assert cli_main(["eval", "--hr", str(hr_dir), "--baseline", "bicubic", "--scale", "2"]) == 0
    cli_bic = json.loads(capsys.readouterr().out)["mean"]["psnr_db"]

    report(f"L1 {l1_before:.4f} -> {l1_after:.4f} ({l1_after / l1_before:.1%}); "
           f"logged first/last {result.records[0]['l1']:.4f}/{result.records[-1]['l1']:.4f}; "
           f"Y-PSNR model {model_psnr:.2f} dB vs bicubic {bic_psnr:.2f} dB ({model_psnr - bic_psnr:+.2f}); "
           f"cli eval {cli_model:.2f} vs {cli_bic:.2f}; {elapsed:.0f}s")
    assert l1_after < 0.5 * l1_before
    assert model_psnr - bic_psnr >= 1.0
    assert cli_bic < cli_model
    assert elapsed < 600


# -- 5. ablation switches ---------------------------------------------------------------------------------

ABLATIONS = {
    "channel shuffle": {"channel_shuffle": False},
    "channel attention": {"channel_attention": False},
    "gamma scaler": {"use_gamma": False},
    "cross gate": {"cross_gate": False},
}


@pytest.mark.acceptance(5, "ablation switches build, train one step and change the output")
def test_ablation_switches(report):
    base_cfg = ModelConfig(scale=2, channels=16, num_rfmg=2, shuffle_group=4, kernel_size=31)
    x = Tensor(np.random.default_rng(0).random((1, 3, 20, 20)).astype(np.float32))
    base, _ = build(base_cfg, seed=0)
    with no_grad():
        y_base = base(x).data
    ds = PairedDataset.from_hr(synthetic_images(2, 32, seed=1), 2)
    for label, change in ABLATIONS.items():
        cfg = base_cfg.replace(**change)
        model, ws = build(cfg, seed=0)
        with no_grad():
            y = model(x).data
        diff = float(np.max(np.abs(y - y_base)))
        before = {k: t.data.copy() for k, t in ws.items()}
        res = train_loop(model, ds, TrainConfig(iterations=1, batch=2, lr_patch=8, scale=2))
        moved = sum(not np.array_equal(before[k], t.data) for k, t in ws.items())
        report(f"{label}: {count_params(cfg)} params, max |dy| {diff:.1e}, {moved}/{len(ws)} tensors updated")
        assert np.isfinite(res.losses[0])
        assert diff > 0
        assert moved > 0


# -- 6. determinism and round trips --------------------------------------------------------------------------


@pytest.mark.acceptance(6, "fixed-seed training is bit-identical; weight and PNG/tensor round trips are exact")
def test_determinism_and_round_trips(report, tmp_path):
    cfg = ModelConfig(scale=2, channels=16, num_rfmg=2, shuffle_group=4, kernel_size=31)
    ds = PairedDataset.from_hr(synthetic_images(3, 40, seed=2), 2)
    tcfg = TrainConfig(iterations=5, batch=4, lr_patch=16, scale=2, seed=9)
    runs = []
    for _ in range(2):
        model, ws = build(cfg, seed=4)
        res = train_loop(model, ds, tcfg)
        runs.append(([r["total"] for r in res.records], encode_weights(ws)))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]

    save_weights(decode_weights(runs[0][1]), tmp_path / "w.lkmn")
    loaded = load_weights(tmp_path / "w.lkmn")
    save_weights(loaded, tmp_path / "w2.lkmn")
    assert (tmp_path / "w.lkmn").read_bytes() == (tmp_path / "w2.lkmn").read_bytes() == runs[0][1]

    rng = np.random.default_rng(5)
    img = ImageBuffer.from_array(rng.integers(0, 256, (37, 53, 3), dtype=np.uint8))
    save_png(img, tmp_path / "a.png")
    assert load_png(tmp_path / "a.png").pixels.tobytes() == img.pixels.tobytes()
    levels = np.arange(256, dtype=np.uint8)
    every = ImageBuffer.from_array(np.stack([levels, levels[::-1], np.roll(levels, 7)], -1)[None])
    assert from_tensor(to_tensor(every)).pixels.tobytes() == every.pixels.tobytes()
    report(f"losses {runs[0][0][0]:.5f}..{runs[0][0][-1]:.5f} identical over 2 runs; "
           f"{len(runs[0][1])}-byte weight file stable; PNG and 256-level tensor round trips exact")


# -- 7. receptive field ------------------------------------------------------------------------------------------


def _input_sensitivity(fn, shape, centre):
    x = Tensor(np.random.default_rng(0).random(shape), requires_grad=True)
    out = fn(x)
    mask = np.zeros(out.shape)
    mask[(0, slice(None), *centre)] = 1.0
    backward(ops.sum_(ops.mul(out, Tensor(mask))))
    return np.abs(x.grad).sum(axis=(0, 1))


@pytest.mark.acceptance(7, "input sensitivity at offset 15 is nonzero for K=31 and zero for 3x3 layers of equal depth")
def test_receptive_field(report):
    c, size, mid, off = 8, 33, 16, 15
    r = np.random.default_rng(3)

    # one large-kernel block against one 3x3 layer
    cfg = BlockConfig(channels=c, shuffle_group=4, kernel_size=31, distill_channels=4, channel_attention=False)
    w = {k: Tensor(r.uniform(-0.5, 0.5, s)) for k, s in blocks.eplkb_shapes(cfg).items()}
    large = _input_sensitivity(lambda x: blocks.eplkb_forward(x, w, cfg), (1, c, size, size), (mid, mid))
    k3 = Tensor(r.uniform(-0.5, 0.5, (c, c, 3, 3)))
    small = _input_sensitivity(lambda x: ops.conv2d(x, ConvParams(k3, padding=(1, 1))), (1, c, size, size), (mid, mid))

    # whole networks of equal depth: K=31 against K=3 (3x3-only), attention off so nothing is global
    net_large_cfg = ModelConfig(scale=2, channels=c, num_rfmg=1, kernel_size=31, channel_attention=False)
    net_small_cfg = net_large_cfg.replace(kernel_size=3)
    sens = {}
    for label, mcfg in (("K=31", net_large_cfg), ("K=3", net_small_cfg)):
        model, ws = build(mcfg, seed=0, dtype=np.float64)
        ws["body.0.cgfn.gamma"].data[:] = 1.0
        sens[label] = _input_sensitivity(model, (1, 3, size, size), (2 * mid, 2 * mid))

    probes = [(mid + off, mid), (mid, mid + off), (mid + off, mid + off), (mid - off, mid - off)]
    block_large = min(large[p] for p in probes)
    block_small = max(small[p] for p in probes)
    net_large = min(sens["K=31"][p] for p in probes)
    net_small = max(sens["K=3"][p] for p in probes)
    ring = np.ones((size, size), bool)
    ring[mid - 1 : mid + 2, mid - 1 : mid + 2] = False
    report(f"block: K=31 {block_large:.2e} vs 3x3 {block_small:.1e}; "
           f"network: K=31 {net_large:.2e} vs K=3 {net_small:.1e} at offset {off}")
    assert block_large > 0 and block_small == 0
    assert not np.any(small[ring])
    assert net_large > 0 and net_small == 0
