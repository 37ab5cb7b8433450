"""CTC loss by forward-backward over the blank-extended lattice, plus
incremental prefix scoring for joint beam decoding.

The loss marginalizes over every frame alignment whose collapse (merge
repeats, then drop blanks) equals the label sequence.  All lattice math is
log-domain float64; minus infinity marks unreachable states.  The gradient
is returned with respect to the pre-softmax logits, where it takes the
standard form posterior minus state-occupancy.

Prefix scoring keeps, per hypothesis, the log probability of every frame
being the end of the prefix with a blank and with the last label; extending
by one label is O(T) and, accumulated to the end of a hypothesis, matches
the full ctc loss on the same sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.tensor import Tensor

NEG_INF = -np.inf


class InfeasibleAlignmentError(Exception):
    """The label sequence cannot fit in the available frames."""


def min_frames(labels) -> int:
    """Shortest alignment length: one frame per label plus a separating
    blank for each adjacent repeated pair."""
    labels = np.asarray(labels)
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    return int(labels.size) + repeats


def ctc_posteriors(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of (T, V) logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _extended_labels(labels, blank: int) -> np.ndarray:
    z = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    z[1::2] = labels
    return z


def _check_labels(labels, n_classes: int, blank: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D sequence")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label id out of range")
    if np.any(labels == blank):
        raise ValueError("labels may not contain the blank id")
    return labels


def ctc_forward_backward(log_probs: np.ndarray, labels, blank: int):
    """Returns (log p(Y|X), occupancy matrix gamma of shape (T, V)).

    gamma[t, k] is the posterior probability that frame t emits class k
    summed over lattice states, so the logit gradient is posterior - gamma.
    """
    T, V = log_probs.shape
    labels = _check_labels(labels, V, blank)
    if T < min_frames(labels):
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels (min {min_frames(labels)} frames) do not fit in {T} frames"
        )
    z = _extended_labels(labels, blank)
    S = z.size
    lp = log_probs[:, z]  # (T, S) emission scores per lattice state

    # skip transition allowed into state s if its label differs from s-2
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (z[2:] != blank) & (z[2:] != z[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, T):
        stay = alpha[t - 1]
        prev = np.full(S, NEG_INF)
        prev[1:] = alpha[t - 1, :-1]
        skip = np.full(S, NEG_INF)
        skip[2:] = np.where(can_skip[2:], alpha[t - 1, :-2], NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, prev), skip) + lp[t]

    log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2] if S > 1 else NEG_INF)
    if log_z == NEG_INF:
        raise InfeasibleAlignmentError("no alignment has nonzero probability")

    # beta excludes the emission at t, so alpha + beta is a path posterior
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1]
        stay = nxt
        succ = np.full(S, NEG_INF)
        succ[:-1] = nxt[1:]
        skip = np.full(S, NEG_INF)
        skip[:-2] = np.where(can_skip[2:], nxt[2:], NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, succ), skip)

    with np.errstate(invalid="ignore"):
        occ = np.exp(alpha + beta - log_z)  # (T, S)
    gamma = np.zeros((T, V))
    np.add.at(gamma.T, z, occ.T)
    return float(log_z), gamma


def ctc_loss(posteriors: np.ndarray, labels, blank: int):
    """(loss, gradient wrt logits) for one utterance.

    loss = -log sum over valid alignments of the per-frame posterior
    product; the gradient assumes posteriors came from a softmax.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_probs = np.log(posteriors)
    log_z, gamma = ctc_forward_backward(log_probs, labels, blank)
    return -log_z, posteriors - gamma


def ctc_loss_op(logits: Tensor, labels, blank: int) -> Tensor:
    """Autograd node: scalar CTC loss from (T, V) logits."""
    logits_f64 = logits.data.astype(np.float64)
    log_probs = logits_f64 - logits_f64.max(axis=1, keepdims=True)
    log_probs = log_probs - np.log(np.exp(log_probs).sum(axis=1, keepdims=True))
    log_z, gamma = ctc_forward_backward(log_probs, labels, blank)
    grad = (np.exp(log_probs) - gamma).astype(logits.dtype)
    loss = np.asarray(-log_z, dtype=logits.dtype)

    def backward(g):
        if logits.requires_grad:
            logits._accumulate(g * grad)

    return Tensor._result(loss, (logits,), backward)


# ---------------------------------------------------------------------------
# prefix scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CtcPrefixState:
    """Per-frame log probabilities of a prefix ending in non-blank/blank."""

    r_nb: np.ndarray
    r_b: np.ndarray
    last_label: int  # -1 for the empty prefix
    log_psi: float  # prefix probability of the sequence so far

    def final_log_prob(self) -> float:
        """log p_ctc of the prefix as a COMPLETE hypothesis."""
        return float(np.logaddexp(self.r_nb[-1], self.r_b[-1]))


def ctc_prefix_initial(log_posteriors: np.ndarray, blank: int) -> CtcPrefixState:
    """State of the empty prefix: only all-blank alignments exist."""
    r_b = np.cumsum(log_posteriors[:, blank])
    r_nb = np.full(log_posteriors.shape[0], NEG_INF)
    return CtcPrefixState(r_nb=r_nb, r_b=r_b, last_label=-1, log_psi=0.0)


def ctc_prefix_score_all(
    state: CtcPrefixState, log_posteriors: np.ndarray, blank: int
):
    """Extend a prefix by every label at once.

    Returns (psi, r_nb, r_b): psi[c] is the prefix probability after
    appending label c, and column c of the (T, V) arrays is the new state
    for that label.  Column `blank` is meaningless and set to -inf.
    """
    T, V = log_posteriors.shape
    phi_base = np.empty((T, V))
    # starting a new label at frame t requires the previous prefix to have
    # ended by t-1; a repeat of the last label additionally needs a blank
    prev_b = np.concatenate([[0.0 if state.last_label == -1 else NEG_INF], state.r_b[:-1]])
    prev_nb = np.concatenate([[NEG_INF], state.r_nb[:-1]])
    phi_base[:] = np.logaddexp(prev_b, prev_nb)[:, None]
    if state.last_label >= 0:
        phi_base[:, state.last_label] = prev_b
    phi_base[:, blank] = NEG_INF

    r_nb = np.empty((T, V))
    run = np.full(V, NEG_INF)
    for t in range(T):
        run = np.logaddexp(run, phi_base[t]) + log_posteriors[t]
        run[blank] = NEG_INF
        r_nb[t] = run
    r_b = np.empty((T, V))
    run_b = np.full(V, NEG_INF)
    prev_nb_rows = np.concatenate([np.full((1, V), NEG_INF), r_nb[:-1]])
    for t in range(T):
        run_b = np.logaddexp(run_b, prev_nb_rows[t]) + log_posteriors[t, blank]
        r_b[t] = run_b
    with np.errstate(invalid="ignore"):
        psi = np.logaddexp.reduce(phi_base + log_posteriors, axis=0)
    psi[blank] = NEG_INF
    return psi, r_nb, r_b


def ctc_prefix_score(
    state: CtcPrefixState, next_label: int, log_posteriors: np.ndarray, blank: int
):
    """Extend a prefix by ``next_label``; returns (psi, new state)."""
    if next_label == blank:
        raise ValueError("cannot extend a prefix with the blank id")
    psi, r_nb, r_b = ctc_prefix_score_all(state, log_posteriors, blank)
    new = CtcPrefixState(
        r_nb=r_nb[:, next_label].copy(),
        r_b=r_b[:, next_label].copy(),
        last_label=int(next_label),
        log_psi=float(psi[next_label]),
    )
    return float(psi[next_label]), new
