"""Shared test utilities: central finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np

from astd.nn import Tensor


def numerical_gradient(loss_fn: Callable[[], float], param: Tensor,
                       eps: float = 1e-6,
                       coords: np.ndarray | None = None) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. param's coordinates.

    coords: optional flat indices to probe (default: all). Returns a flat
    array of derivatives for the probed coordinates.
    """
    flat = param.data.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    grads = np.empty(len(coords))
    for slot, i in enumerate(coords):
        original = flat[i]
        h = eps * max(1.0, abs(original))
        flat[i] = original + h
        up = loss_fn()
        flat[i] = original - h
        down = loss_fn()
        flat[i] = original
        grads[slot] = (up - down) / (2.0 * h)
    return grads


def assert_gradients_match(build_loss: Callable[[], Tensor],
                           params: dict[str, Tensor],
                           rtol: float = 1e-5, atol: float = 1e-8,
                           max_coords: int | None = None,
                           seed: int = 0) -> None:
    """Backprop build_loss once and compare each parameter's gradient
    against central finite differences, coordinate by coordinate."""
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    rng = np.random.default_rng(seed)

    def scalar_loss() -> float:
        return float(build_loss().data)

    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        analytic = p.grad.reshape(-1)
        n = analytic.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        numeric = numerical_gradient(scalar_loss, p, coords=coords)
        picked = analytic[coords]
        err = np.abs(numeric - picked)
        bound = atol + rtol * (np.abs(numeric) + np.abs(picked))
        worst = np.argmax(err - bound)
        assert np.all(err <= bound), (
            f"{name}: coordinate {coords[worst]} analytic {picked[worst]:.8g} "
            f"vs numeric {numeric[worst]:.8g}")
