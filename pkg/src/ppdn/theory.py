"""Monte-Carlo checks of noisy-target training risk decompositions.

Each noisy-target objective E||f(input) - target||^2 splits exactly, per
sample, into the supervised risk plus correction terms:

    ||f(in) - target||^2 = ||f(in) - x||^2 - 2 t.(f(in) - x) + ||t||^2

with t = target - x the target's noise. The harness estimates every term
by simulation with a frozen estimator network and reports the residual

    lhs - supervised + cross - constant      (cross = 2 E[t . f(in)])

whose per-sample value reduces to 2 t.x, a zero-mean quantity when the
target noise is independent of the clean patch; it must shrink like
1/sqrt(n). For the two-independent-observations setup the cross term
itself also vanishes in expectation because the target noise never enters
the estimator's input. When input and target share noise (the
noisier-input and recorrupted setups) the cross term has no such
guarantee, which is exactly what the decomposition makes visible.

All norms are per-pixel means so patch size does not change scales, and
reductions use exact compensated summation.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .degrade import jpeg_decay
from .errors import InsufficientSamplesError
from .image import ImageTensor
from .network import forward
from .noise import corrupt, make_observation_pair

MIN_SAMPLES = 100
MIN_TRIALS = 20
_CHUNK = 512


@dataclass
class DecompositionResult:
    """Monte-Carlo estimates of one objective's supervised decomposition."""

    method: str
    n_samples: int
    lhs: float
    supervised_term: float
    cross_term: float
    constant_term: float
    residual: float
    residual_stderr: float
    cross_stderr: float

    def summary(self):
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "lhs": self.lhs,
            "supervised": self.supervised_term,
            "cross": self.cross_term,
            "constant": self.constant_term,
            "residual": self.residual,
            "stderr": self.residual_stderr,
            "cross_stderr": self.cross_stderr,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def _sample_patches(corpus, n, rng):
    stack = corpus.stack() if hasattr(corpus, "stack") else np.asarray(corpus)
    idx = rng.choice(stack.shape[0], size=n, replace=True)
    return stack[idx]


def _fsum(values):
    return math.fsum(values)


def _mean_se(per_sample):
    n = len(per_sample)
    mean = _fsum(per_sample) / n
    var = _fsum((v - mean) ** 2 for v in per_sample) / max(n - 1, 1)
    return mean, math.sqrt(var / n)


def _decompose(method, estimator, x, inputs, targets, n_samples):
    """Shared term accounting. x/inputs/targets: (n, h, w, c) arrays."""
    d = x[0].size
    lhs_s, sup_s, cross_s, const_s, resid_s = [], [], [], [], []
    for start in range(0, n_samples, _CHUNK):
        xs = x[start : start + _CHUNK]
        ins = inputs[start : start + _CHUNK]
        tgt = targets[start : start + _CHUNK]
        f = forward(estimator, ins, train=False)
        t = tgt - xs
        axes = (1, 2, 3)
        lhs = ((f - tgt) ** 2).sum(axis=axes) / d
        sup = ((f - xs) ** 2).sum(axis=axes) / d
        cross = 2.0 * (t * f).sum(axis=axes) / d
        const = (t * t).sum(axis=axes) / d
        resid = lhs - sup + cross - const  # algebraically 2 t.x / d
        lhs_s.extend(lhs)
        sup_s.extend(sup)
        cross_s.extend(cross)
        const_s.extend(const)
        resid_s.extend(resid)
    lhs, _ = _mean_se(lhs_s)
    sup, _ = _mean_se(sup_s)
    cross, cross_se = _mean_se(cross_s)
    const, _ = _mean_se(const_s)
    resid, resid_se = _mean_se(resid_s)
    return DecompositionResult(
        method=method,
        n_samples=n_samples,
        lhs=lhs,
        supervised_term=sup,
        cross_term=cross,
        constant_term=const,
        residual=resid,
        residual_stderr=resid_se,
        cross_stderr=cross_se,
    )


def _check_samples(n_samples):
    if n_samples < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need >= {MIN_SAMPLES} samples, got {n_samples}")


def verify_n2n(clean_corpus, sigma1, sigma2, estimator, n_samples, rng):
    """Two-independent-observations objective: input x+n1, target x+n2.

    The input noise n1 should dominate (sigma1 >> sigma2). The target
    noise n2 is independent of the input, so the cross term converges to
    zero and the objective equals the supervised risk plus E||n2||^2.
    """
    _check_samples(n_samples)
    x = _sample_patches(clean_corpus, n_samples, rng)
    n1 = rng.normal(0.0, sigma1, size=x.shape)
    n2 = rng.normal(0.0, sigma2, size=x.shape)
    return _decompose("n2n", estimator, x, x + n1, x + n2, n_samples)


def verify_nr2n(clean_corpus, sigma1, sigma_prime, estimator, n_samples, rng):
    """Noisier-input objective: input x+n1+n1', target x+n1.

    With sigma_prime = 0 this collapses to ||f(C1) - C1|| with constant
    ||C1 - x||. The target noise n1 also rides inside the input, so the
    cross term need not vanish; it is reported as measured.
    """
    _check_samples(n_samples)
    x = _sample_patches(clean_corpus, n_samples, rng)
    n1 = rng.normal(0.0, sigma1, size=x.shape)
    n1p = rng.normal(0.0, sigma_prime, size=x.shape) if sigma_prime > 0 else 0.0
    return _decompose("nr2n", estimator, x, x + n1 + n1p, x + n1, n_samples)


def verify_r2r(clean_corpus, sigma1, sigma_prime, sigma_hat, estimator, n_samples, rng):
    """Recorrupted-pair objective: input x+n1+n_hat, target x+n1+n1'.

    n_hat and n1' are independent of each other but share n1, so the
    same caveat about the cross term applies as for the noisier-input
    setup. sigma_hat = 0 collapses the input to C1.
    """
    _check_samples(n_samples)
    x = _sample_patches(clean_corpus, n_samples, rng)
    n1 = rng.normal(0.0, sigma1, size=x.shape)
    nh = rng.normal(0.0, sigma_hat, size=x.shape) if sigma_hat > 0 else 0.0
    n1p = rng.normal(0.0, sigma_prime, size=x.shape) if sigma_prime > 0 else 0.0
    return _decompose("r2r", estimator, x, x + n1 + nh, x + n1 + n1p, n_samples)


@dataclass
class ConstantReductionResult:
    """Does JPEG decay move the second observation closer to clean?"""

    n_trials: int
    fraction_improved: float
    mean_dist_noisy: float
    mean_dist_decayed: float
    mean_var_noisy: float
    mean_var_decayed: float
    mean_var_clean: float
    frac_var_noisy_gt_decayed: float
    frac_var_decayed_gt_clean: float

    def summary(self):
        return {
            "method": "constant-reduction",
            "n_trials": self.n_trials,
            "fraction_improved": self.fraction_improved,
            "mean_dist_noisy": self.mean_dist_noisy,
            "mean_dist_decayed": self.mean_dist_decayed,
            "mean_var_noisy": self.mean_var_noisy,
            "mean_var_decayed": self.mean_var_decayed,
            "mean_var_clean": self.mean_var_clean,
            "frac_var_noisy_gt_decayed": self.frac_var_noisy_gt_decayed,
            "frac_var_decayed_gt_clean": self.frac_var_decayed_gt_clean,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def verify_constant_reduction(clean_corpus, noise, jpeg, n_trials, rng):
    """Measure ||B2 - x|| vs ||A2 - x|| and the variance ordering.

    Per trial: draw a clean patch x, corrupt it to A, re-corrupt to the
    second observation A2, decay to B2 = jpeg(A2). Distances are
    per-pixel RMS; a tie (possible only at quality 1) counts as not
    improved. Variances are plain pixel variances per image.
    """
    if n_trials < MIN_TRIALS:
        raise InsufficientSamplesError(f"need >= {MIN_TRIALS} trials, got {n_trials}")
    stack = clean_corpus.stack() if hasattr(clean_corpus, "stack") else np.asarray(clean_corpus)
    improved = 0
    var_a_gt_b = 0
    var_b_gt_x = 0
    dist_a, dist_b, var_a, var_b, var_x = [], [], [], [], []
    for _ in range(n_trials):
        idx = int(rng.choice(stack.shape[0]))
        x = ImageTensor(stack[idx], clamped=True)
        noisy = corrupt(x, noise)
        pair = make_observation_pair(noisy, noise)
        a2 = pair.a2
        b2, _ = jpeg_decay(a2, jpeg)
        da = math.sqrt(np.mean((a2.data - x.data) ** 2))
        db = math.sqrt(np.mean((b2.data - x.data) ** 2))
        va = float(np.var(a2.data))
        vb = float(np.var(b2.data))
        vx = float(np.var(x.data))
        improved += db < da
        var_a_gt_b += va > vb
        var_b_gt_x += vb > vx
        dist_a.append(da)
        dist_b.append(db)
        var_a.append(va)
        var_b.append(vb)
        var_x.append(vx)
    return ConstantReductionResult(
        n_trials=n_trials,
        fraction_improved=improved / n_trials,
        mean_dist_noisy=_fsum(dist_a) / n_trials,
        mean_dist_decayed=_fsum(dist_b) / n_trials,
        mean_var_noisy=_fsum(var_a) / n_trials,
        mean_var_decayed=_fsum(var_b) / n_trials,
        mean_var_clean=_fsum(var_x) / n_trials,
        frac_var_noisy_gt_decayed=var_a_gt_b / n_trials,
        frac_var_decayed_gt_clean=var_b_gt_x / n_trials,
    )
