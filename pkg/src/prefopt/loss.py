"""DPO, IPO and their self-refined variants with exact reverse-mode gradients.

Every loss here is one pass over the same shallow graph::

    logits -> log_softmax -> log-ratio margins -> per-tuple link -> mean

The backward pass walks those nodes in reverse with hand-written adjoints.
Gradients are taken with respect to ``pi.logits`` only; ``ref`` is constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .datagen import Batch, as_arrays
from .errors import ConfigurationError
from .policy import PolicyTable, check_compatible
from .reward import log_sigmoid, sigmoid

METHODS = ("dpo", "ipo", "sr-dpo", "sr-ipo")


@dataclass
class LossBatchResult:
    loss: float
    gradient: np.ndarray
    per_tuple_margin: np.ndarray  # beta * (log-ratio(y+) - log-ratio(y-))
    per_tuple_delta: np.ndarray


def _margins(logp_pi, logp_ref, rows, yp, yn):
    return (logp_pi[rows, yp] - logp_ref[rows, yp]) - (logp_pi[rows, yn] - logp_ref[rows, yn])


def _objective(pi: PolicyTable, ref: PolicyTable, batch: Batch, beta: float, *,
               link: str, lam: float = 0.0, delta: str | None = None,
               detach: bool = True, shifts=None) -> LossBatchResult:
    """Evaluate one loss and its gradient.

    link
        ``"dpo"`` for ``-log sigmoid(beta * m - s)``, ``"ipo"`` for
        ``(m - s - 1/(2 beta))**2``, with ``m`` the unscaled margin and ``s``
        the per-tuple shift.
    delta
        ``None``, ``"refine"`` (augmented-context refinement) or ``"naive"``
        (raw-context refinement); the shift is ``lam * delta``.
    shifts
        constant per-tuple shifts, used instead of ``delta``.
    """
    check_compatible(pi, ref)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    q, yp, yn = as_arrays(batch)
    n = q.size
    if n == 0:
        raise ValueError("batch must be non-empty")

    logp_pi = pi.log_probs()
    logp_ref = ref.log_probs()
    m = _margins(logp_pi, logp_ref, q, yp, yn)

    if shifts is not None:
        d = np.zeros(n)
        s = np.asarray(shifts, dtype=np.float64)
        aug = None
    elif delta == "refine":
        if not pi.has_augmentation:
            raise ConfigurationError("self-refined losses need an augmentation map")
        aug = pi.aug_rows(q)
        d = beta * _margins(logp_pi, logp_ref, aug, yp, yn)
        s = lam * d
    elif delta == "naive":
        aug = None
        d = beta * m
        s = lam * d
    else:
        aug = None
        d = np.zeros(n)
        s = 0.0

    if link == "dpo":
        z = beta * m - s
        losses = -log_sigmoid(z)
        dz = -sigmoid(-z) / n
        dm = beta * dz
    elif link == "ipo":
        z = m - s - 1.0 / (2.0 * beta)
        losses = z * z
        dz = 2.0 * z / n
        dm = dz
    else:
        raise ValueError(f"unknown link {link!r}")
    loss = float(np.mean(losses))

    # adjoint of the shift; dropped entirely under stop-gradient
    daug = None
    if shifts is None and delta is not None and not detach:
        dd = -lam * dz
        if delta == "naive":
            dm = dm + beta * dd
        else:
            daug = beta * dd

    adj = np.zeros_like(logp_pi)
    np.add.at(adj, (q, yp), dm)
    np.add.at(adj, (q, yn), -dm)
    if daug is not None:
        np.add.at(adj, (aug, yp), daug)
        np.add.at(adj, (aug, yn), -daug)
    # log_softmax backward: dL/dlogits = adj - softmax * rowsum(adj)
    grad = adj - softmax(pi.logits, axis=1) * adj.sum(axis=1, keepdims=True)
    return LossBatchResult(loss, grad, beta * m, d)


def dpo_loss(pi, ref, batch, beta=0.1) -> LossBatchResult:
    return _objective(pi, ref, batch, beta, link="dpo")


def ipo_loss(pi, ref, batch, beta=0.1) -> LossBatchResult:
    return _objective(pi, ref, batch, beta, link="ipo")


def sr_dpo_loss(pi, ref, batch, beta=0.1, lam=0.5, detach_delta=True) -> LossBatchResult:
    """DPO with the margin shifted by ``lam`` times the augmented-context refinement."""
    return _objective(pi, ref, batch, beta, link="dpo", lam=lam, delta="refine", detach=detach_delta)


def sr_ipo_loss(pi, ref, batch, beta=0.1, lam=0.5, detach_delta=True) -> LossBatchResult:
    """IPO regression target raised by ``lam`` times the refinement.

    The margin is unscaled as in IPO while the refinement keeps its beta.
    """
    return _objective(pi, ref, batch, beta, link="ipo", lam=lam, delta="refine", detach=detach_delta)


def shifted_loss(pi, ref, batch, beta, shifts, link="dpo") -> LossBatchResult:
    """DPO- or IPO-style loss with fixed per-tuple shifts injected as constants."""
    return _objective(pi, ref, batch, beta, link=link, shifts=shifts)


def sr_dpo_naive_degeneracy(pi, ref, batch, beta=0.1, lam=0.5):
    """Return ``(with_naive, rescaled)``.

    ``with_naive`` is Sr-DPO using the raw-context refinement with gradients
    flowing through it; ``rescaled`` is plain DPO at ``beta * (1 - lam)``.
    The two coincide in value and gradient.
    """
    if not 0 <= lam < 1:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    a = _objective(pi, ref, batch, beta, link="dpo", lam=lam, delta="naive", detach=False)
    b = dpo_loss(pi, ref, batch, beta * (1.0 - lam))
    return a, b


def method_loss(method, pi, ref, batch, beta, lam=0.0, detach_delta=True) -> LossBatchResult:
    if method == "dpo":
        return dpo_loss(pi, ref, batch, beta)
    if method == "ipo":
        return ipo_loss(pi, ref, batch, beta)
    if method == "sr-dpo":
        return sr_dpo_loss(pi, ref, batch, beta, lam, detach_delta)
    if method == "sr-ipo":
        return sr_ipo_loss(pi, ref, batch, beta, lam, detach_delta)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
