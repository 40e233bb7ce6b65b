"""The seeded benchmark generator and the 90-instance evaluation grid.

Instances are fully determined by their seed: K true centroids with components
uniform on [-1, 1], and per node five points per cluster uniform in the ball
of radius 0.5 around each centroid. The grid spans node counts {2,3,4},
dimensions {2,3,4}, and cluster counts {3,4}, five replicates each.
"""

import tempfile
from pathlib import Path

import numpy as np

from fedkmeans.bench import BenchmarkSpec, generate_grid, generate_instance


def main():
    spec = BenchmarkSpec(n_nodes=2, n_y=2, K=3, replicate=1, seed=5)
    instance = generate_instance(spec)
    print(f"single instance {instance.name}: "
          f"{instance.n_nodes} nodes x {instance.nodes[0].n_points} points")

    centroids = np.array([
        np.random.default_rng(np.random.SeedSequence((spec.seed, 0, k)))
        .uniform(-1.0, 1.0, spec.n_y)
        for k in range(spec.K)
    ])
    worst = max(
        float(np.min(np.linalg.norm(centroids - y, axis=1)))
        for node in instance.nodes for y in node.observations
    )
    print(f"largest point-to-centroid distance: {worst:.4f} "
          f"(radius bound {spec.radius})")

    with tempfile.TemporaryDirectory() as tmp:
        specs = generate_grid(0, tmp)
        files = sorted(p.name for p in Path(tmp).glob("*.json"))
        print(f"\ngrid: {len(specs)} instances written, e.g. "
              f"{files[0]} ... {files[-1]}")
        manifest = (Path(tmp) / "manifest.csv").read_text().splitlines()
        print(f"manifest rows: {len(manifest) - 1}")
        print("first rows:")
        for line in manifest[:4]:
            print(f"  {line}")


if __name__ == "__main__":
    main()
