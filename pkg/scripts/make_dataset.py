"""
Write a procedural shape dataset to disk
Produces <out>/train and <out>/test directories readable with --data-dir
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from pydantic import ValidationError  # noqa: E402

from src.exceptions import DataError  # noqa: E402
from src.services.data import DatasetSpec, generate_dataset, save_dataset_dir, split  # noqa: E402


def make_dataset(out: Path, spec: DatasetSpec) -> None:
    clouds, class_names = generate_dataset(spec)
    train, test = split(clouds, spec)
    save_dataset_dir(train, out / "train", class_names)
    save_dataset_dir(test, out / "test", class_names)
    print(f"✅ Wrote {len(train)} train and {len(test)} test clouds to {out}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("out", type=Path)
    parser.add_argument("--classes", help="comma-separated shape kinds")
    parser.add_argument("--per-class-train", type=int, default=200)
    parser.add_argument("--per-class-test", type=int, default=50)
    parser.add_argument("--points-per-cloud", type=int, default=1024)
    parser.add_argument("--noise-sigma", type=float, default=0.01)
    parser.add_argument("--scale-jitter", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    raw = {
        "per_class_train": args.per_class_train,
        "per_class_test": args.per_class_test,
        "points_per_cloud": args.points_per_cloud,
        "noise_sigma": args.noise_sigma,
        "scale_jitter": args.scale_jitter,
        "seed": args.seed,
    }
    if args.classes:
        raw["classes"] = [c.strip() for c in args.classes.split(",") if c.strip()]
    try:
        make_dataset(args.out, DatasetSpec(**raw))
    except ValidationError as e:
        print(f"❌ Invalid dataset options: {e}")
        sys.exit(2)
    except (DataError, OSError) as e:
        print(f"❌ {e}")
        sys.exit(3)
