"""Shared random-instance builders and gradient checking for the test suite."""

import numpy as np
import torch

IGNORE = 255


def rand_probs(rng, c, h, w, dtype=torch.float64, sharpness=2.0):
    z = torch.tensor(rng.normal(size=(c, h, w)) * sharpness, dtype=dtype)
    return torch.softmax(z, dim=0)


def rand_labels(rng, c, h, w, p_ignore=0.0, ignore=IGNORE):
    lab = rng.integers(0, c, size=(h, w))
    if p_ignore > 0:
        mask = rng.random((h, w)) < p_ignore
        mask[0, 0] = False
        lab = np.where(mask, ignore, lab)
    return torch.tensor(lab, dtype=torch.long)


def rand_unit_map(rng, h, w, dtype=torch.float64, lo=0.02, hi=0.98):
    return torch.tensor(rng.uniform(lo, hi, size=(h, w)), dtype=dtype)


def assert_fd_matches(make_loss, tensor, n_coords=10, seed=0, h=1e-6, rel=1e-3):
    """Check autograd gradients of make_loss(t) against central differences.

    make_loss must rebuild the loss from scratch on every call so that
    perturbed entries propagate. tensor is cloned to float64.
    """
    rng = np.random.default_rng(seed)
    t = tensor.detach().clone().double().requires_grad_(True)
    (analytic,) = torch.autograd.grad(make_loss(t), t)
    t = t.detach()
    chosen = rng.choice(t.numel(), size=min(n_coords, t.numel()), replace=False)
    for flat in chosen:
        idx = np.unravel_index(int(flat), tuple(t.shape))
        orig = t[idx].item()
        t[idx] = orig + h
        f_plus = float(make_loss(t))
        t[idx] = orig - h
        f_minus = float(make_loss(t))
        t[idx] = orig
        fd = (f_plus - f_minus) / (2 * h)
        a = analytic[idx].item()
        err = abs(fd - a) / max(abs(fd), abs(a), 1e-8)
        assert err <= rel, f"gradient mismatch at {idx}: fd={fd:.6g} autograd={a:.6g}"


def spatial_permute(tensor, perm):
    """Apply one flat spatial permutation to the last two dims."""
    h, w = tensor.shape[-2:]
    flat = tensor.reshape(*tensor.shape[:-2], h * w)
    return flat[..., perm].reshape(*tensor.shape)
