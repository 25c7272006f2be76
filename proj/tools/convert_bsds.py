#!/usr/bin/env python3
"""Convert BSDS500 (and optionally PASCAL-Context edge data) into the pedger layout.

Input:  BSDS500/data/images/<split>/<id>.jpg
        BSDS500/data/groundTruth/<split>/<id>.mat   (cell array, one Boundaries map per annotator)
Output: <out>/images/<split>/<id>.png
        <out>/groundTruth/<split>/<id>/<k>.png      (0/255, one file per annotator)
        <out>/manifest_<split>.tsv

Training splits can be expanded 32x: 16 rotations (22.5 degree steps) times
{original, horizontal flip}. Rotated images are cropped to the largest
axis-aligned rectangle that contains no padding.
"""

import argparse
import math
import sys
from pathlib import Path

import cv2
import numpy as np
import scipy.io

MANIFEST_HEADER = "pedger-manifest\t1\t{kind}\t{split}\n"


def read_bsds_annotations(mat_path):
    mat = scipy.io.loadmat(str(mat_path))
    cells = mat["groundTruth"][0]
    maps = []
    for cell in cells:
        boundaries = cell["Boundaries"][0, 0]
        maps.append((boundaries > 0).astype(np.uint8))
    if not maps:
        raise ValueError(f"{mat_path}: no annotations")
    return maps


def largest_rotated_rect(w, h, angle):
    """Width and height of the largest axis-aligned rectangle inside a w x h
    rectangle rotated by angle (radians)."""
    if w <= 0 or h <= 0:
        return 0, 0
    long_side, short_side = (w, h) if w >= h else (h, w)
    sin_a, cos_a = abs(math.sin(angle)), abs(math.cos(angle))
    if short_side <= 2.0 * sin_a * cos_a * long_side or abs(sin_a - cos_a) < 1e-10:
        x = 0.5 * short_side
        wr, hr = (x / sin_a, x / cos_a) if w >= h else (x / cos_a, x / sin_a)
    else:
        cos_2a = cos_a * cos_a - sin_a * sin_a
        wr = (w * cos_a - h * sin_a) / cos_2a
        hr = (h * cos_a - w * sin_a) / cos_2a
    return int(wr), int(hr)


def rotate_crop(img, degrees, interpolation):
    h, w = img.shape[:2]
    centre = (w / 2.0, h / 2.0)
    m = cv2.getRotationMatrix2D(centre, degrees, 1.0)
    cos_a, sin_a = abs(m[0, 0]), abs(m[0, 1])
    nw, nh = int(h * sin_a + w * cos_a), int(h * cos_a + w * sin_a)
    m[0, 2] += nw / 2.0 - centre[0]
    m[1, 2] += nh / 2.0 - centre[1]
    rotated = cv2.warpAffine(img, m, (nw, nh), flags=interpolation, borderValue=0)
    cw, ch = largest_rotated_rect(w, h, math.radians(degrees))
    x0, y0 = (nw - cw) // 2, (nh - ch) // 2
    return rotated[y0:y0 + ch, x0:x0 + cw]


def variants(image, annotations, augment):
    if not augment:
        yield "", image, annotations
        return
    for r in range(16):
        deg = 22.5 * r
        rot_img = rotate_crop(image, deg, cv2.INTER_LINEAR) if r else image
        rot_ann = [rotate_crop(a, deg, cv2.INTER_NEAREST) if r else a for a in annotations]
        for flip in (0, 1):
            img = cv2.flip(rot_img, 1) if flip else rot_img
            ann = [cv2.flip(a, 1) if flip else a for a in rot_ann]
            yield f"_r{r:02d}_f{flip}", img, ann


def write_sample(out, split, sample_id, image, annotations, manifest):
    img_rel = Path("images") / split / f"{sample_id}.png"
    (out / img_rel).parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(out / img_rel), image)
    ann_rels = []
    for k, a in enumerate(annotations):
        rel = Path("groundTruth") / split / sample_id / f"{k}.png"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(out / rel), (a > 0).astype(np.uint8) * 255)
        ann_rels.append(rel.as_posix())
    manifest.append("\t".join([sample_id, img_rel.as_posix(), *ann_rels]))


def convert_bsds(bsds_root, out, split, augment, manifest):
    img_dir = bsds_root / "data" / "images" / split
    gt_dir = bsds_root / "data" / "groundTruth" / split
    if not img_dir.is_dir() or not gt_dir.is_dir():
        sys.exit(f"error: expected {img_dir} and {gt_dir}")
    count = 0
    for img_path in sorted(img_dir.glob("*.jpg")):
        mat = gt_dir / f"{img_path.stem}.mat"
        if not mat.exists():
            sys.exit(f"error: missing annotations {mat}")
        image = cv2.imread(str(img_path), cv2.IMREAD_COLOR)
        if image is None:
            sys.exit(f"error: cannot read {img_path}")
        for suffix, img, ann in variants(image, read_bsds_annotations(mat), augment):
            write_sample(out, split, img_path.stem + suffix, img, ann, manifest)
            count += 1
    return count


def convert_pairs(list_file, out, split, augment, manifest):
    """Image/label pairs, one per line: '<image> <label>' relative to the list file."""
    base = list_file.parent
    count = 0
    for line in list_file.read_text().splitlines():
        if not line.strip():
            continue
        img_rel, label_rel = line.split()[:2]
        image = cv2.imread(str(base / img_rel), cv2.IMREAD_COLOR)
        label = cv2.imread(str(base / label_rel), cv2.IMREAD_GRAYSCALE)
        if image is None or label is None:
            sys.exit(f"error: cannot read pair '{line}'")
        stem = "voc_" + Path(img_rel).stem
        for suffix, img, ann in variants(image, [(label > 0).astype(np.uint8)], augment):
            write_sample(out, split, stem + suffix, img, ann, manifest)
            count += 1
    return count


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("bsds_root", type=Path, help="BSDS500 directory (contains data/images, data/groundTruth)")
    p.add_argument("out", type=Path)
    p.add_argument("--splits", default="train,val,test")
    p.add_argument("--augment", default="train", help="comma-separated splits to expand 32x ('' for none)")
    p.add_argument("--merge-val", action="store_true", help="write val samples into the train split")
    p.add_argument("--extra-train-list", type=Path,
                   help="list of '<image> <label>' pairs (e.g. PASCAL-Context edges) appended to train")
    args = p.parse_args()

    augment = {s for s in args.augment.split(",") if s}
    manifests = {}
    for split in [s for s in args.splits.split(",") if s]:
        target = "train" if args.merge_val and split == "val" else split
        m = manifests.setdefault(target, [])
        n = convert_bsds(args.bsds_root, args.out, split, split in augment, m)
        print(f"{split} -> {target}: {n} samples")
    if args.extra_train_list:
        m = manifests.setdefault("train", [])
        n = convert_pairs(args.extra_train_list, args.out, "train", "train" in augment, m)
        print(f"extra train pairs: {n} samples")
    for split, lines in manifests.items():
        lines.sort()
        with open(args.out / f"manifest_{split}.tsv", "w") as f:
            f.write(MANIFEST_HEADER.format(kind="bsds", split=split))
            f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
