"""Figure rendering for the report paths (headless, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import AttackReport


def save_attack_boxplot(report: AttackReport, path: str,
                        chance_rate: float | None = None) -> None:
    """Box plot of wrong-key agreement rates, with the correct key marked."""
    fig, ax = plt.subplots(figsize=(4.0, 4.5))
    ax.boxplot([list(report.rates)], whis=1.5, widths=0.45,
               tick_labels=["wrong keys"])
    ax.scatter([1], [report.positive_control_rate], marker="*", s=140,
               color="tab:red", zorder=3, label="correct key")
    if chance_rate is not None:
        ax.axhline(chance_rate, ls="--", lw=1, color="gray", label="chance")
    ax.set_ylabel("top-1 agreement with baseline")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(f"Random-key attack ({report.num_keys} keys)")
    ax.legend(loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_curves(round_logs: list, path: str) -> None:
    """Per-client local loss across federation rounds."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    rounds = [log.round_index for log in round_logs]
    if round_logs:
        num_clients = len(round_logs[0].client_losses)
        for ci in range(num_clients):
            ax.plot(rounds, [log.client_losses[ci] for log in round_logs],
                    marker="o", ms=3, label=f"client {ci}")
        ax.legend(fontsize=8)
    ax.set_xlabel("round")
    ax.set_ylabel("local training loss")
    ax.set_title("Federated head training")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_image_panel(named_images: list, path: str) -> None:
    """Side-by-side panel of (title, 2-D or 3-D pixel array in [0,1])."""
    n = len(named_images)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8))
    if n == 1:
        axes = [axes]
    for ax, (title, arr) in zip(axes, named_images):
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        ax.imshow(np.clip(arr, 0.0, 1.0),
                  cmap="gray" if arr.ndim == 2 else None)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
