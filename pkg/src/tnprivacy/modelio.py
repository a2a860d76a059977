"""Plain-text model files.

MPS files start with ``mps N d b out_dim output_site`` followed by one
tensor line per site. MLP files start with ``mlp L`` then, per layer, a line
with the activation name followed by the weight and bias tensor lines.
"""

from __future__ import annotations

from pathlib import Path

from .mps import MpsModel
from .neural import Layer, Mlp
from .tensor import TensorError, read_tensors, write_tensors


class ModelFormatError(TensorError):
    pass


def save_model(model, path, header: str = "") -> None:
    """Write ``model``; ``header`` holds optional leading ``#`` comment lines."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        if isinstance(model, MpsModel):
            fh.write(f"mps {model.n_sites} {model.phys_dim} {model.bond_dim} "
                     f"{model.out_dim} {model.output_site}\n")
            write_tensors(fh, model.sites)
        elif isinstance(model, Mlp):
            fh.write(f"mlp {len(model.layers)}\n")
            for layer in model.layers:
                fh.write(layer.activation + "\n")
                write_tensors(fh, [layer.weights, layer.bias])
        else:
            raise TypeError(f"cannot save {type(model).__name__}")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        head = line.split()
        if not head:
            raise ModelFormatError(f"{path}: empty model file")
        try:
            if head[0] == "mps" and len(head) == 6:
                n, _, _, _, out_site = (int(x) for x in head[1:])
                return MpsModel(tuple(read_tensors(fh, n)), out_site)
            if head[0] == "mlp" and len(head) == 2:
                layers = []
                for _ in range(int(head[1])):
                    act = fh.readline().strip()
                    w, b = read_tensors(fh, 2)
                    layers.append(Layer(w, b, act))
                return Mlp(layers)
        except ValueError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
    raise ModelFormatError(f"{path}: unrecognized header {' '.join(head)!r}")
