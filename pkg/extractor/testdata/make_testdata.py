#!/usr/bin/env python3
"""Regenerate testdata/photo.png.

The test photo is one of the real photographs bundled with scikit-image
(BSD licensed); any 8-bit non-interlaced RGB PNG works.
"""

import os
import shutil

import skimage.data

src = os.path.join(os.path.dirname(skimage.data.__file__), "chelsea.png")
dst = os.path.join(os.path.dirname(__file__), "photo.png")
shutil.copy(src, dst)
print(f"wrote {dst} ({os.path.getsize(dst)} bytes)")
