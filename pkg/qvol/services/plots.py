import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "qvol"
matplotlib.rcParams["svg.fonttype"] = "none"

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, PngImagePlugin

from qvol.run import header_line

from qvol.services.limit_shape import H_prime, LiquidPoint, eta_map, limit_shape_H, liquid_lower_edge
from qvol.services.special_functions import greens
from qvol.services.stats_harness import HeightProfile

logger = logging.getLogger(__name__)

HEATMAP_SIZE = 200
COLORMAP = "viridis"


def _svg_metadata(config: dict) -> dict:
    """Fixed date for byte-identical output; the config header goes into the description."""
    return {"Date": None, "Description": header_line(config)}


def plot_height_profile(path: Path, config: dict, profile: HeightProfile, t: float, n: int) -> Path:
    """Empirical h/2N with error bars against the limit shape H."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(profile.ys, profile.means, yerr=profile.errors, fmt="o", markersize=2, label=f"samples, N={n}")
    ax.plot(profile.ys, profile.limit, "k-", linewidth=1, label="limit shape")
    ax.set_xlabel("y")
    ax.set_ylabel("h / 2N")
    ax.set_title(f"tau={profile.tau}, t={t}, sup distance {profile.sup_distance:.3g}")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_svg_metadata(config))
    plt.close(fig)
    logger.info(f"Wrote height profile plot to {path}")
    return path


def plot_limit_shape(path: Path, config: dict, t: float, ys: np.ndarray) -> Path:
    """H and H' with the frozen/liquid boundary at y = log 2/log t marked."""
    edge = liquid_lower_edge(t)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ys, limit_shape_H(ys, t), "k-", linewidth=1, label="H")
    ax.plot(ys, H_prime(ys, t), "b--", linewidth=1, label="H'")
    ax.axvline(edge, color="red", linestyle=":", label=f"liquid edge y={edge:.6g}")
    ax.set_xlabel("y")
    ax.set_title(f"Limit shape, t={t}")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_svg_metadata(config))
    plt.close(fig)
    logger.info(f"Wrote limit shape plot to {path}")
    return path


def greens_grid(tau: float, y: float, t: float, size: int = HEATMAP_SIZE) -> np.ndarray:
    """G(eta, eta(tau, y)) on a size x size grid of the fundamental domain; NaN at the pole."""
    source = eta_map(LiquidPoint(tau, y), t)
    omega = 1j * -math.log(t) / (2 * math.pi)
    xs = (np.arange(size) + 0.5) / (2 * size)
    heights = (np.arange(size) + 0.5) * omega.imag / size
    eta = xs[None, :] + 1j * heights[::-1, None]
    values = np.full(eta.shape, np.nan)
    away = np.abs(eta - source) > 1e-6
    values[away] = greens(eta[away], source, omega)
    return values


def greens_heatmap(
    path: Path, config: dict, tau: float, y: float, t: float, size: int = HEATMAP_SIZE
) -> tuple[Path, Path]:
    """Green's function heatmap around the image of (tau, y), as SVG and PNG.

    Returns:
        Paths of the SVG and PNG files; the PNG shares the stem of `path` and
        carries the config header in a `config` text chunk
    """
    values = greens_grid(tau, y, t, size)
    omega_imag = -math.log(t) / (2 * math.pi)
    fig, ax = plt.subplots(figsize=(5, 5))
    image = ax.imshow(values, cmap=COLORMAP, extent=(0.0, 0.5, 0.0, omega_imag), aspect="auto")
    fig.colorbar(image, ax=ax, label="G")
    ax.set_xlabel("Re eta")
    ax.set_ylabel("Im eta")
    ax.set_title(f"Green's function, source at tau={tau}, y={y}")
    fig.tight_layout()
    svg_path = Path(path).with_suffix(".svg")
    fig.savefig(svg_path, format="svg", metadata=_svg_metadata(config))
    plt.close(fig)

    finite = np.nan_to_num(values, nan=float(np.nanmax(values)))
    low, high = float(finite.min()), float(finite.max())
    scaled = (finite - low) / (high - low) if high > low else np.zeros_like(finite)
    rgba = matplotlib.colormaps[COLORMAP](scaled, bytes=True)
    png_path = Path(path).with_suffix(".png")
    info = PngImagePlugin.PngInfo()
    info.add_text("config", header_line(config))
    Image.fromarray(np.ascontiguousarray(rgba[..., :3])).save(png_path, format="PNG", pnginfo=info)
    logger.info(f"Wrote Green's function heatmap to {svg_path} and {png_path}")
    return svg_path, png_path
