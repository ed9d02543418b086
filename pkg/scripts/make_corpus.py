"""Write the synthetic fixture corpus (and optional random objects) as OBJ files plus a JSONL manifest."""

import argparse
import os

from gimcodec import fixtures as F
from gimcodec.mesh import save_mesh_file
from gimcodec.pipeline import BatchConfig, JobManifest, ManifestEntry


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="directory for meshes and manifest.jsonl")
    ap.add_argument("--synthetic", type=int, default=0, help="also write this many random multi-part objects")
    args = ap.parse_args()
    meshes = dict(F.fixture_corpus())
    meshes.update({f"synthetic{s:04d}": F.synthetic_object(s) for s in range(args.synthetic)})
    entries = []
    for name, mesh in meshes.items():
        path = os.path.join(args.out, "meshes", f"{name}.obj")
        save_mesh_file(path, mesh)
        entries.append(ManifestEntry(name, os.path.relpath(path, args.out), (f"synthetic {name}",)))
    manifest = os.path.join(args.out, "manifest.jsonl")
    JobManifest(entries, BatchConfig(output_dir=os.path.join(args.out, "gims"))).dump(manifest)
    print(f"wrote {len(entries)} meshes and {manifest}")


if __name__ == "__main__":
    main()
