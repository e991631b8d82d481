"""Static SVG figures.  Output is byte-stable for identical inputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "chanmdp", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def pareto_plot(rows, path, title="Policy comparison"):
    """Scatter of success rate against normalized power savings.

    Rows whose controller name starts with ``MDP`` are joined in the order
    given, forming the front traced by the reward weight sweep.
    """
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        mdp = [r for r in rows if r["controller"].startswith("MDP")]
        other = [r for r in rows if not r["controller"].startswith("MDP")]
        if mdp:
            ax.plot([r["normalized_power_savings"] for r in mdp],
                    [r["success_rate"] for r in mdp], "o-", color="tab:blue", label="MDP")
        for r in other:
            ax.scatter(r["normalized_power_savings"], r["success_rate"], marker="s")
            ax.annotate(r["controller"], (r["normalized_power_savings"], r["success_rate"]),
                        fontsize=7, xytext=(3, 3), textcoords="offset points")
        ax.set_xlabel("normalized power savings")
        ax.set_ylabel("success rate")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        if mdp:
            ax.legend(loc="lower left")
        fig.tight_layout()
    return _save(fig, path)


def series_plot(x, series, path, xlabel, ylabel, title=""):
    """One polyline per named series over a shared x axis."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for name, ys in series.items():
            ax.plot(x, ys, "o-", label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
    return _save(fig, path)


def response_plot(freqs, mags, path):
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 4))
        for m in range(mags.shape[1]):
            ax.plot(freqs, mags[:, m], lw=0.8, label=f"ch{m}")
        ax.set_ylim(-120, 5)
        ax.set_xlabel("normalized frequency (cycles/sample)")
        ax.set_ylabel("magnitude (dB)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=6, ncol=4)
        fig.tight_layout()
    return _save(fig, path)
