"""Plot the CSVs written by ``aamagls analyze-array`` and ``aamagls evaluate``.

matplotlib is not a package dependency; install it separately to use this.

    aamagls analyze-array --output-dir out
    aamagls design --output-dir out
    aamagls evaluate --output-dir out
    python demos/plot_recipes.py out        # writes PNGs next to the CSVs
"""

import csv
import glob
import os
import sys

import numpy as np


def read(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}


def db(x):
    return 10 * np.log10(np.maximum(x, 1e-30))


def main(root):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    analyze = os.path.join(root, "analyze")
    if os.path.isdir(analyze):
        t = read(os.path.join(analyze, "null_space.csv"))
        fig, ax = plt.subplots()
        for name, col in t.items():
            if name.startswith("xi_null_db_"):
                ax.semilogx(t["freq_hz"][1:], col[1:], label=name[len("xi_null_db_"):])
        ax.axhline(-10, color="k", ls=":")
        ax.set(xlabel="frequency [Hz]", ylabel="null-space energy [dB]")
        ax.legend(ncol=3, fontsize="small")
        fig.savefig(os.path.join(analyze, "null_space.png"), dpi=120)

        t = read(os.path.join(analyze, "magnitude.csv"))
        fig, ax = plt.subplots()
        for name, col in t.items():
            if name.startswith("xi_mag_db_"):
                ax.semilogx(t["freq_hz"][1:], col[1:], label=name[len("xi_mag_db_"):])
        ideal = next(v for k, v in t.items() if k.startswith("xi_ideal_db_"))
        ax.semilogx(t["freq_hz"][1:], ideal[1:], "k--", label="ideal")
        ax.set(xlabel="frequency [Hz]", ylabel="magnitude [dB]")
        ax.legend(fontsize="small")
        fig.savefig(os.path.join(analyze, "magnitude.png"), dpi=120)

    for sub in sorted(glob.glob(os.path.join(root, "evaluate", "rot*"))):
        fig, axes = plt.subplots(1, 2, sharey=True, figsize=(10, 4))
        for path in sorted(glob.glob(os.path.join(sub, "binaural_errors_*.csv"))):
            t = read(path)
            label = os.path.basename(path)[len("binaural_errors_"):-4]
            for ax, ear in zip(axes, ("left", "right")):
                ax.semilogx(t["freq_hz"][1:], db(t[f"eps_comb_{ear}"][1:]), label=label)
                ax.set(title=ear, xlabel="frequency [Hz]")
        axes[0].set(ylabel="combined binaural error [dB]", ylim=(-60, 5))
        axes[0].legend(fontsize="small")
        fig.savefig(os.path.join(sub, "binaural_errors.png"), dpi=120)

        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
        for path in sorted(glob.glob(os.path.join(sub, "lateralization_*.csv"))):
            t = read(path)
            label = os.path.basename(path)[len("lateralization_"):-4]
            axes[0].plot(t["azimuth_deg"], t["itd_s"] * 1e6, label=label)
            axes[1].plot(t["azimuth_deg"], t["ild_db"], label=label)
        axes[0].set_ylabel("ITD [us]")
        axes[1].set(ylabel="ILD [dB]", xlabel="azimuth [deg]")
        axes[0].legend(fontsize="small")
        fig.savefig(os.path.join(sub, "lateralization.png"), dpi=120)
        plt.close("all")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out")
