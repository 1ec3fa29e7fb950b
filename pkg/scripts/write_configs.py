"""Write the JSON experiment configs shipped in configs/."""

from pathlib import Path

from opext.bench import ExperimentConfig, KernelGrid

OUT = Path(__file__).resolve().parents[1] / "configs"


def main():
    OUT.mkdir(exist_ok=True)
    ExperimentConfig(name="desk").dump(OUT / "desk.json")
    ExperimentConfig(
        name="desk-matern",
        kernels=[KernelGrid("matern", "1/2", [5.0, 10.0]), KernelGrid("matern", "3/2", [5.0, 10.0])],
    ).dump(OUT / "desk_matern.json")
    # 3 families x 2 sigma x 3 center counts x 10 inputs, exact and perturbed oracles
    ExperimentConfig(
        name="bound-grid",
        kernels=[
            KernelGrid("gaussian", "0", [5.0, 10.0]),
            KernelGrid("matern", "3/2", [5.0, 10.0]),
            KernelGrid("wendland", "2", [5 / 3, 10 / 3]),
        ],
        centers=[312, 625, 1250],
        deltas=[0.0, 1e-3, 1e-2],
        test_functions={"max_degrees": [3, 6, 8, 10, 12], "per_degree": 2, "seed": 1},
    ).dump(OUT / "bound_grid.json")
    ExperimentConfig(name="shape-b", manifold="b", kernels=[KernelGrid("matern", "3/2", [5.0, 10.0])],
                     centers=[156, 312, 625]).dump(OUT / "shape_b.json")
    print(f"configs written to {OUT}")


if __name__ == "__main__":
    main()
