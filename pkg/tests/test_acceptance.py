"""Scorecard suite: one test per headline capability of the package.

Each test prints a single ``criterion NN: PASS/FAIL (...)`` line (run with
``pytest -s`` to watch the scorecard as it fills in). Unlike the unit
suites these run at realistic sizes and check end-to-end behavior:
closed-form rate/distortion against empirical encoders, over-fitting gaps,
channel quadrature against Monte-Carlo, desk-scale retrieval, and the
regularized inverse solver. Runtime budgets are asserted where a check is
only meaningful if it stays cheap.
"""

import time

import numpy as np
import pytest

from terncode.allocation import reverse_water_fill, shannon_lower_bound
from terncode.container import load_model, save_model
from terncode.datasets import (
    fit_dct_subband_whitener,
    fit_pca_whitener,
    generate,
)
from terncode.info import (
    binary_bsc,
    build_channel,
    coding_gain,
    optimize_lambda_y,
    ternary_entropy,
)
from terncode.inverse import (
    denoise_by_reconstruction,
    make_cs_problem,
    model_compressor,
    solve,
)
from terncode.numerics import make_rng, normalized_distortion
from terncode.search import (
    SearchCounters,
    SearchResult,
    aggregate_search,
    binary_baseline_train,
    binary_encode,
    binary_search,
    build_index,
    fast_decode,
    refine,
)
from terncode.stc import (
    stc_distortion_per_dim,
    stc_rate_upper_bound,
    train_ml_stc,
    train_stc_layer,
    train_stc_procrustean,
)
from terncode.vq import (
    assign,
    kmeans,
    row_gradient,
    row_hessian,
    row_hessian_inv,
    row_objective,
    rq_decode,
    rq_encode,
    rq_train,
    rrq_train,
    vr_kmeans,
)


def _report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def gaussian_batch():
    # shared by the single-layer checks below
    return generate("iid_gaussian", 512, 10_000, make_rng(42))


def test_01_single_layer_matches_closed_form(gaussian_batch):
    # Empirical distortion of one trained ternary layer against the
    # per-dimension closed form evaluated at the fitted variances.
    start = time.monotonic()
    f = gaussian_batch
    rels = {}
    for lam in (0.25, 0.5, 1.0, 1.5, 2.0):
        layer = train_stc_layer(f, lam=lam)
        emp = float(np.mean(np.square(f - layer.decode(layer.encode(f)))))
        ana = float(np.mean(stc_distortion_per_dim(
            np.sqrt(layer.projected_variances), lam)))
        rels[lam] = abs(emp - ana) / ana
    elapsed = time.monotonic() - start
    worst = max(rels.values())
    ok = worst <= 0.02 and elapsed < 30.0
    _report(1, ok, f"max rel dev {worst:.2e} over 5 thresholds "
                   f"(tol 2e-2), {elapsed:.1f}s")


def test_02_zero_threshold_is_sign_quantizer(gaussian_batch):
    # lam = 0 keeps every coordinate: 1 bit/dim and the sign-quantizer
    # distortion 1 - 2/pi per unit variance.
    f = gaussian_batch
    layer = train_stc_layer(f, lam=0.0)
    rate = stc_rate_upper_bound(layer.alphas)
    emp = float(np.mean(np.square(f - layer.decode(layer.encode(f)))))
    ana = (1.0 - 2.0 / np.pi) * float(np.mean(layer.projected_variances))
    rel = abs(emp - ana) / ana
    ok = abs(rate - 1.0) < 1e-9 and rel <= 0.01
    _report(2, ok, f"rate {rate:.6f} bits/dim, distortion rel dev "
                   f"{rel:.2e} from 1-2/pi (tol 1e-2)")


def test_03_rate_ceiling_is_log2_3():
    # The per-dimension entropy bound tops out at log2(3), reached when
    # all three symbols are equally likely.
    grid = np.linspace(0.0, 0.5, 200_001)
    peak = float(np.max(ternary_entropy(grid)))
    at_third = stc_rate_upper_bound(np.full(8, 1.0 / 3.0))
    target = float(np.log2(3.0))
    dev = max(abs(peak - target), abs(at_third - target))
    ok = dev <= 1e-3
    _report(3, ok, f"max entropy {peak:.9f} vs log2(3), dev {dev:.1e} "
                   f"(tol 1e-3)")


def test_04_mlstc_covers_the_full_rate_regime():
    # A 20-layer residual ternary stack on a correlated source: held-out
    # distortion must fall at every added layer and cross 0.05 within a
    # 4 bits/dim budget; the remaining gap to the Gaussian bound at the
    # same rate is reported.
    start = time.monotonic()
    ftr = generate("ar1", 512, 10_000, make_rng(0), rho=0.9)
    fte = generate("ar1", 512, 2_000, make_rng(1), rho=0.9)
    model = train_ml_stc(ftr, 20, k=64)
    codes = model.encode(fte)
    energy = float(np.sum(np.square(fte)))
    d_test = np.array([
        float(np.sum(np.square(fte - model.decode(codes, up_to_layer=l))))
        / energy
        for l in range(1, model.depth + 1)
    ])
    strictly_decreasing = bool(np.all(np.diff(d_test) < 0))
    rates = np.cumsum(model.rate_bounds())
    reached = np.flatnonzero(d_test <= 0.05)
    hit = int(reached[0]) if reached.size else -1
    var0 = model.layers[0].projected_variances
    slb = float(shannon_lower_bound(var0, rates[hit])) / float(np.mean(var0))
    gap = d_test[hit] - slb
    elapsed = time.monotonic() - start
    ok = (strictly_decreasing and hit >= 0 and rates[hit] <= 4.0
          and np.isfinite(gap) and elapsed < 300.0)
    _report(4, ok, f"monotone={strictly_decreasing}, D={d_test[hit]:.4f} "
                   f"at {rates[hit]:.3f} bits/dim (budget 4), "
                   f"bound gap {gap:.4f}, {elapsed:.0f}s")


def test_05_variance_regularization_beats_plain_kmeans():
    # n = N = 1000 is the regime where plain K-means memorizes: held-out
    # distortion ~1 (no compression) despite a sub-0.9 training value.
    # The variance-regularized variant must cut the held-out distortion
    # of a correlated source by at least 10%.
    start = time.monotonic()

    def held_out(fte, codebook):
        return normalized_distortion(fte, codebook[:, assign(fte, codebook)])

    train_d, test_d = [], []
    for s in range(5):
        ftr = generate("iid_gaussian", 1000, 1000, make_rng(100 + s))
        fte = generate("iid_gaussian", 1000, 1000, make_rng(200 + s))
        res = kmeans(ftr, 256, rng=make_rng(s))
        train_d.append(res.train_distortion)
        test_d.append(held_out(fte, res.codebook))
    mean_train, mean_test = float(np.mean(train_d)), float(np.mean(test_d))

    ratios = []
    for s in range(5):
        ftr = generate("ar1", 1000, 1000, make_rng(300 + s), rho=0.99)
        fte = generate("ar1", 1000, 1000, make_rng(400 + s), rho=0.99)
        w = fit_pca_whitener(ftr)
        fw, fwte = w.transform(ftr), w.transform(fte)
        alloc = reverse_water_fill(w.variances, np.log2(256) / 1000)
        vr = vr_kmeans(fw, 256, alloc.codeword_variances,
                       active=alloc.active, mu=1.0, rng=make_rng(s))
        km = kmeans(fw, 256, rng=make_rng(s))
        ratios.append(held_out(fwte, vr.codebook) / held_out(fwte, km.codebook))
    mean_ratio = float(np.mean(ratios))
    elapsed = time.monotonic() - start
    ok = (mean_train < 0.9 and mean_test >= 0.99 and mean_ratio <= 0.90
          and elapsed < 600.0)
    _report(5, ok, f"kmeans train {mean_train:.4f} / test {mean_test:.4f}, "
                   f"regularized/plain held-out ratio {mean_ratio:.4f} "
                   f"(need <= 0.90), {elapsed:.0f}s")


def test_06_regularized_residual_stack_generalizes_in_depth():
    # Per-layer train/test gap of the regularized residual quantizer must
    # stay at most half the plain RQ gap once the stack is 3+ layers deep.
    ftr = generate("ar1", 1000, 1000, make_rng(0), rho=0.99)
    fte = generate("ar1", 1000, 1000, make_rng(1), rho=0.99)
    w = fit_pca_whitener(ftr)
    fw, fwte = w.transform(ftr), w.transform(fte)

    def curves(model):
        codes_tr = rq_encode(fw, model.codebooks)
        codes_te = rq_encode(fwte, model.codebooks)
        e_tr = float(np.sum(np.square(fw)))
        e_te = float(np.sum(np.square(fwte)))
        tr, te = [], []
        for l in range(1, model.layers + 1):
            tr.append(float(np.sum(np.square(
                fw - rq_decode(codes_tr[:l], model.codebooks)))) / e_tr)
            te.append(float(np.sum(np.square(
                fwte - rq_decode(codes_te[:l], model.codebooks)))) / e_te)
        return np.asarray(tr), np.asarray(te)

    rq = rq_train(fw, 256, 10, rng=make_rng(2))
    rrq = rrq_train(fw, 256, 10, rng=make_rng(2))
    rq_tr, rq_te = curves(rq)
    rrq_tr, rrq_te = curves(rrq)
    ratio = (rrq_te - rrq_tr) / (rq_te - rq_tr)
    worst = float(ratio[2:].max())
    ok = worst <= 0.5
    _report(6, ok, f"max gap ratio {worst:.3f} at layers >= 3 (need <= 0.5)")


def test_07_ternary_channel_beats_binary_per_stored_bit():
    # At 10 dB query noise some store-side threshold must preserve more
    # information per stored bit than sign quantization; the quadrature
    # channel table is cross-checked against 10^7 Monte-Carlo draws.
    noise2 = 0.1
    binary = binary_bsc(1.0, noise2)
    best_lam, best_gain, best_lam_y = 0.0, -1.0, 0.0
    for lam_x in np.arange(0.75, 3.01, 0.25):
        lam_y, _ = optimize_lambda_y(1.0, noise2, float(lam_x), grid=81)
        gain = coding_gain(build_channel(1.0, noise2, float(lam_x), lam_y))
        if gain > best_gain:
            best_lam, best_gain, best_lam_y = float(lam_x), gain, lam_y

    ch = build_channel(1.0, noise2, best_lam, best_lam_y)
    rng = make_rng(987)
    draws = 10_000_000
    x = rng.standard_normal(draws)
    y = x + np.sqrt(noise2) * rng.standard_normal(draws)
    ix = np.where(x > best_lam, 0, np.where(x < -best_lam, 2, 1))
    iy = np.where(y > best_lam_y, 0, np.where(y < -best_lam_y, 2, 1))
    mc = np.bincount(3 * ix + iy, minlength=9).reshape(3, 3) / draws
    sigma = np.sqrt(np.maximum(ch.joint * (1 - ch.joint), 1e-30) / draws)
    dev = float(np.max(np.abs(mc - ch.joint) / sigma))
    ok = best_gain > binary.gain and dev <= 3.0
    _report(7, ok, f"ternary gain {best_gain:.4f} at threshold {best_lam} "
                   f"vs binary {binary.gain:.4f}, MC dev {dev:.2f} sigma "
                   f"(tol 3)")


def test_08_fast_decoder_agrees_with_dense_oracles():
    # The posting-list vote decoder only touches active positions; it must
    # equal the dense score matrix exactly (default weights are integers,
    # so float addition order cannot matter). Refinement over a full-size
    # shortlist must equal exhaustive reconstruction-distance NN.
    vote_hits = 0
    for i in range(100):
        rng = make_rng(1000 + i)
        count = int(rng.integers(10, 501))
        m = int(rng.integers(4, 129))
        sparsity = float(rng.uniform(0.05, 0.4))
        p = (sparsity / 2, 1 - sparsity, sparsity / 2)
        codes = rng.choice([-1, 0, 1], size=(m, count), p=p).astype(np.int8)
        query = rng.choice([-1, 0, 1], size=m, p=p).astype(np.int8)
        index = build_index([codes], [0.5], decode_layers=1)
        votes = fast_decode(query, index)
        prod = codes.astype(np.int64) * query[:, None]
        dense = 1.0 * (prod == 1).sum(axis=0) - 4.0 * (prod == -1).sum(axis=0)
        vote_hits += np.array_equal(votes, dense)

    refine_hits = 0
    for i in range(10):
        rng = make_rng(2000 + i)
        n, count = 24, int(rng.integers(50, 301))
        f = generate("ar1", n, count, make_rng(3000 + i), rho=0.8)
        model = train_ml_stc(f, 3, lam=0.7)
        codes = model.encode(f)
        q = f[:, int(rng.integers(count))] + 0.3 * rng.standard_normal(n)
        everything = SearchResult(ids=np.arange(count),
                                  scores=np.zeros(count))
        ref = refine(q, everything, model, codes, count)
        dists = np.sum(np.square(model.decode(codes) - q[:, None]), axis=0)
        refine_hits += ref.ids[0] == int(np.argmin(dists))

    ok = vote_hits == 100 and refine_hits == 10
    _report(8, ok, f"vote oracle {vote_hits}/100 exact, "
                   f"refine oracle {refine_hits}/10 exact")


def test_09_identification_at_desk_scale():
    # 10^5 stored vectors, 500 noisy queries at 10 dB: the sparse ternary
    # pipeline (votes then refinement) must match or beat a Hamming
    # baseline given the same entropy budget, and the measured posting
    # touches must track the 4 a_X a_Y N m prediction per query.
    start = time.monotonic()
    n, count, n_queries, chunk = 500, 100_000, 500, 20_000
    db = generate("iid_gaussian", n, count, make_rng(0))
    train = db[:, :chunk]
    stack = train_ml_stc(train, 1, lam=2.0)
    bits = stc_rate_upper_bound(stack.layers[0].alphas) * n
    m_bin = int(round(bits))
    binary = binary_baseline_train(train, m_bin, rng=make_rng(3))
    codes = np.concatenate([stack.encode(db[:, i:i + chunk])[0]
                            for i in range(0, count, chunk)], axis=1)
    db_words = binary_encode(binary, db)

    qrng = make_rng(7)
    true_ids = qrng.choice(count, n_queries, replace=False)
    queries = db[:, true_ids] + np.sqrt(0.1) * qrng.standard_normal(
        (n, n_queries))
    qcodes = stack.encode(queries)[0]
    qwords = binary_encode(binary, queries)

    index = build_index([codes], stack.train_distortions, decode_layers=1)
    counters = SearchCounters()
    stc_hits = bin_hits = 0
    for i in range(n_queries):
        short = aggregate_search([qcodes[:, i]], index, list_size=100,
                                 counters=counters)
        ref = refine(queries[:, i], short, stack, [codes], 100, counters)
        stc_hits += ref.ids[0] == true_ids[i]
        bres = binary_search(binary, db_words, qwords[:, i], list_size=100)
        bin_hits += bres.ids[0] == true_ids[i]
    stc_recall = stc_hits / n_queries
    bin_recall = bin_hits / n_queries

    alpha_x = float((codes == 1).sum() / codes.size)
    alpha_y = float((qcodes == 1).sum() / qcodes.size)
    expected = 4.0 * alpha_x * alpha_y * count * n * n_queries
    touch_ratio = counters.vote_touches / expected
    elapsed = time.monotonic() - start
    ok = (stc_recall >= bin_recall and abs(touch_ratio - 1.0) <= 0.2
          and elapsed < 600.0)
    _report(9, ok, f"recall@1 ternary {stc_recall:.3f} vs binary "
                   f"{bin_recall:.3f} at {m_bin} bits, touch ratio "
                   f"{touch_ratio:.3f} (tol 20%), {elapsed:.0f}s")


def test_10_compressibility_prior_recovers_subsampled_signals():
    # Gradient recovery with a trained compressor as the prior: for every
    # observation count the error trace must settle monotonically (0.1%
    # ripple allowance) and end below the pseudo-inverse baseline.
    start = time.monotonic()
    n = 512
    f = generate("ar1", n, 2000, make_rng(11), rho=0.99)
    model = train_ml_stc(f, 8, lam=1.0)
    truth = generate("ar1", n, 1, make_rng(1000), rho=0.99)[:, 0]
    results = []
    ok = True
    for l in (32, 128, 256):
        problem = make_cs_problem(n, l, 1.0, rng=make_rng(2000 + l),
                                  f_true=truth, mu=100.0, init="adjoint",
                                  max_iter=800)
        _, trace = solve(problem, model_compressor(model), reference=truth)
        mse = np.asarray(trace.mse)
        baseline = float(np.mean(np.square(
            np.linalg.pinv(problem.matrix) @ problem.observation - truth)))
        settled = float(np.max(np.diff(mse[5:]))) <= 1e-3 * mse[5]
        ok = ok and settled and mse[-1] < baseline
        results.append(f"l={l}: {mse[-1]:.3f} vs pinv {baseline:.3f}")
    elapsed = time.monotonic() - start
    ok = ok and elapsed < 300.0
    _report(10, ok, "; ".join(results) + f", {elapsed:.0f}s")


def test_11_numerical_hygiene(tmp_path):
    # Derivatives, matrix identities, transform inverses, and container
    # determinism — the checks that catch silent numerics drift.
    rng = make_rng(9)
    m = 6
    c = rng.standard_normal(m)
    b = 0.3 * rng.standard_normal(m)
    zeta = rng.uniform(0.05, 0.3, m)
    mu, target = 0.7, 1.4

    h = 1e-6
    fd_grad = np.empty(m)
    for j in range(m):
        up, dn = c.copy(), c.copy()
        up[j] += h
        dn[j] -= h
        fd_grad[j] = (row_objective(up, b, zeta, mu, target)
                      - row_objective(dn, b, zeta, mu, target)) / (2 * h)
    grad = row_gradient(c, b, zeta, mu, target)
    grad_dev = float(np.linalg.norm(fd_grad - grad) / np.linalg.norm(grad))

    h = 1e-5
    fd_hess = np.empty((m, m))
    for j in range(m):
        up, dn = c.copy(), c.copy()
        up[j] += h
        dn[j] -= h
        fd_hess[:, j] = (row_gradient(up, b, zeta, mu, target)
                         - row_gradient(dn, b, zeta, mu, target)) / (2 * h)
    hess = row_hessian(c, zeta, mu, target)
    hess_dev = float(np.linalg.norm(fd_hess - hess) / np.linalg.norm(hess))

    sm = row_hessian_inv(c, zeta, mu, target)
    direct = np.linalg.inv(hess)
    sm_dev = float(np.linalg.norm(sm - direct) / np.linalg.norm(direct))

    f_small = generate("ar1", 32, 500, make_rng(5), rho=0.8)
    layer = train_stc_procrustean(f_small, lam=0.5)
    eye_dev = float(np.max(np.abs(layer.basis @ layer.basis.T - np.eye(32))))

    f_pca = generate("ar1", 32, 300, make_rng(6), rho=0.9)
    w = fit_pca_whitener(f_pca)
    pca_dev = float(np.max(np.abs(w.inverse(w.transform(f_pca)) - f_pca)))
    f_dct = generate("var_decay", 64, 200, make_rng(8), decay=0.2)
    dw = fit_dct_subband_whitener(f_dct, 8, 8, 4)
    dct_dev = float(np.max(np.abs(dw.inverse(dw.transform(f_dct)) - f_dct)))

    model = train_ml_stc(f_pca, 2, lam=0.6)
    first, second = tmp_path / "a.stcm", tmp_path / "b.stcm"
    save_model(first, model, whitener=w, seed=6, source="ar1")
    loaded, lw, meta = load_model(first)
    save_model(second, loaded, whitener=lw, seed=meta["seed"],
               source=meta["source"], flags=meta["flags"])
    byte_equal = first.read_bytes() == second.read_bytes()

    ok = (grad_dev <= 1e-5 and hess_dev <= 1e-4 and sm_dev <= 1e-8
          and eye_dev <= 1e-8 and pca_dev <= 1e-10 and dct_dev <= 1e-10
          and byte_equal)
    _report(11, ok, f"grad {grad_dev:.1e}, hess {hess_dev:.1e}, "
                    f"inv {sm_dev:.1e}, basis {eye_dev:.1e}, whiteners "
                    f"{max(pca_dev, dct_dev):.1e}, container "
                    f"byte-equal={byte_equal}")


def test_12_denoising_peaks_then_degrades():
    # Reconstruction depth as a denoiser: under heavy noise the fidelity
    # of a small-threshold stack must rise to an interior peak and then
    # fall as deeper layers start reproducing the noise. Small ripples
    # (0.2 dB) are tolerated on either side of the peak.
    f = generate("var_decay", 64, 2000, make_rng(3), decay=0.3)
    model = train_ml_stc(f, 10, lam=0.05)
    sigma2 = 3.0 * float(np.mean(np.var(f, axis=1))) \
        * model.train_distortions[0]
    noisy = f + np.sqrt(sigma2) * make_rng(4).standard_normal(f.shape)
    counts, _, psnr = denoise_by_reconstruction(noisy, f, model)
    peak = int(np.argmax(psnr))
    ok = (0 < peak < len(counts) - 1
          and psnr[-1] < psnr[peak] - 0.5
          and bool(np.all(np.diff(psnr[:peak + 1]) >= -0.2))
          and bool(np.all(np.diff(psnr[peak:]) <= 0.2)))
    _report(12, ok, f"peak at depth {counts[peak]}/{counts[-1]}, "
                    f"{psnr[peak]:.2f} dB, final {psnr[-1]:.2f} dB")
