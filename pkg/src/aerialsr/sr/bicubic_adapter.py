"""Reference adapter: ``python -m aerialsr.sr.bicubic_adapter --in A --out B --scale R``."""

import argparse
import sys

from ..imaging import ImageFormatError, load_image, save_image
from . import upscale_bicubic


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--in", dest="src", required=True)
    parser.add_argument("--out", dest="dst", required=True)
    parser.add_argument("--scale", type=int, required=True)
    args = parser.parse_args(argv)
    try:
        img = load_image(args.src)
        save_image(upscale_bicubic(img, args.scale), args.dst)
    except (OSError, ImageFormatError, ValueError) as exc:
        print(f"bicubic_adapter: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
