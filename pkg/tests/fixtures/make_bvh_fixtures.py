"""Regenerate tests/fixtures/bvh/*.bvh (checked in; rerun only to change the corpus)."""
import os

import numpy as np

from skelgen import bvh
from skelgen.data import synth_corpus
from skelgen.skeleton import reference_skeleton, toy_skeleton

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "bvh")

HAND = {
    "01_minimal.bvh": """HIERARCHY
ROOT Hips
{
\tOFFSET 0.0 0.0 0.0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
}
MOTION
Frames: 1
Frame Time: 0.033333
0.0 90.0 0.0 0.0 0.0 0.0
""",
    "02_root_end_site.bvh": """HIERARCHY
ROOT Root
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Xrotation Yrotation Zrotation
  End Site
  {
    OFFSET 0 10 0
  }
}
MOTION
Frames: 3
Frame Time: 0.0333333
0 0 0 0 0 0
1 0 0 10 20 30
2 0 0 -10 -20 -30
""",
    "03_three_joint_chain.bvh": """HIERARCHY
ROOT Hips
{
\tOFFSET 0.00 0.00 0.00
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
\tJOINT Spine
\t{
\t\tOFFSET 0.00 10.00 0.00
\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\tJOINT Head
\t\t{
\t\t\tOFFSET 0.00 8.00 1.50
\t\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET 0.00 4.00 0.00
\t\t\t}
\t\t}
\t}
}
MOTION
Frames: 2
Frame Time: 0.04
0.0 95.0 0.0 0.0 0.0 0.0 5.0 0.0 0.0 -5.0 10.0 2.5
0.5 95.2 0.1 1.0 -1.0 0.5 6.0 0.0 0.0 -4.0 11.0 2.0
""",
    "04_rotation_only_root.bvh": """HIERARCHY
ROOT Base
{
\tOFFSET 0 0 0
\tCHANNELS 3 Yrotation Xrotation Zrotation
\tJOINT Arm
\t{
\t\tOFFSET 1 0 0
\t\tCHANNELS 3 Yrotation Xrotation Zrotation
\t\tEnd Site
\t\t{
\t\t\tOFFSET 1 0 0
\t\t}
\t}
}
MOTION
Frames: 2
Frame Time: 0.008333
45 0 0 0 30 0
90 0 0 0 60 0
""",
    "05_zero_channel_joint.bvh": """HIERARCHY
ROOT Hips
{
\tOFFSET 0 0 0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
\tJOINT Fixed
\t{
\t\tOFFSET 0 5 0
\t\tCHANNELS 0
\t\tJOINT Tip
\t\t{
\t\t\tOFFSET 0 5 0
\t\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET 0 1 0
\t\t\t}
\t\t}
\t}
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 0 0 0 0 0 1 2 3
0 0 0 0 0 0 4 5 6
""",
    "06_no_frames.bvh": """HIERARCHY
ROOT Hips
{
\tOFFSET 0 0 0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
}
MOTION
Frames: 0
Frame Time: 0.0333333
""",
    "07_scientific_and_negzero.bvh": """HIERARCHY
ROOT Hips
{
\tOFFSET -0.0 1e-3 2.5E+1
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
\tJOINT Child
\t{
\t\tOFFSET 1.0e0 -0.0 0
\t\tCHANNELS 3 Xrotation Zrotation Yrotation
\t\tEnd Site
\t\t{
\t\t\tOFFSET 0 -0.000000 3
\t\t}
\t}
}
MOTION
Frames: 2
Frame Time: 3.3333e-2
-0.0 1e-6 -1.5e+2 359.999999 -179.5 0.000001 1e2 -1e-7 12.5
0 0 0 0 0 0 0 0 0
""",
    "08_messy_whitespace.bvh": "HIERARCHY\r\nROOT   Hips\r\n{\r\n    OFFSET 0 0 0\r\n\r\n"
    "    CHANNELS 6   Xposition Yposition Zposition   Zrotation Yrotation Xrotation\r\n"
    "    JOINT Leg\r\n    {\r\n        OFFSET 0 -4 0\r\n        CHANNELS 3 Zrotation Yrotation Xrotation\r\n"
    "        End Site\r\n        {\r\n            OFFSET 0 -4 0\r\n        }\r\n    }\r\n}\r\n"
    "MOTION\r\nFrames:   2\r\nFrame Time:\t0.0333333\r\n"
    "0  1  2  3  4  5  6  7  8\r\n  9 10 11 12 13 14 15 16 17  \r\n",
    "09_position_order.bvh": """HIERARCHY
ROOT Pelvis
{
\tOFFSET 0 0 0
\tCHANNELS 6 Zposition Xposition Yposition Yrotation Zrotation Xrotation
\tJOINT L
\t{
\t\tOFFSET 1 0 0
\t\tCHANNELS 3 Yrotation Zrotation Xrotation
\t\tEnd Site
\t\t{
\t\t\tOFFSET 1 0 0
\t\t}
\t}
\tJOINT R
\t{
\t\tOFFSET -1 0 0
\t\tCHANNELS 3 Xrotation Yrotation Zrotation
\t\tEnd Site
\t\t{
\t\t\tOFFSET -1 0 0
\t\t}
\t}
}
MOTION
Frames: 1
Frame Time: 0.05
3 1 2 10 20 30 1 2 3 4 5 6
""",
}


def _star(n_children=5, frames=4, rng=None):
    lines = ["HIERARCHY", "ROOT Center", "{", "\tOFFSET 0 0 0",
             "\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"]
    for k in range(n_children):
        a = 2 * np.pi * k / n_children
        lines += [f"\tJOINT Spoke{k}", "\t{", f"\t\tOFFSET {np.cos(a):.6f} 0.000000 {np.sin(a):.6f}",
                  "\t\tCHANNELS 3 Zrotation Yrotation Xrotation",
                  "\t\tEnd Site", "\t\t{", "\t\t\tOFFSET 0.5 0 0", "\t\t}", "\t}"]
    lines += ["}", "MOTION", f"Frames: {frames}", "Frame Time: 0.0333333"]
    vals = rng.uniform(-80, 80, (frames, 6 + 3 * n_children))
    lines += [" ".join(f"{v:.6f}" for v in row) for row in vals]
    return "\n".join(lines) + "\n"


def _deep_chain(n=30, frames=3, rng=None):
    lines = ["HIERARCHY"]
    for i in range(n):
        pad = "\t" * i
        lines += [f"{pad}{'ROOT' if i == 0 else 'JOINT'} Link{i}", pad + "{", f"{pad}\tOFFSET 0 {0 if i == 0 else 1} 0"]
        lines.append(f"{pad}\tCHANNELS {6 if i == 0 else 3} " +
                     ("Xposition Yposition Zposition " if i == 0 else "") + "Zrotation Xrotation Yrotation")
    lines += ["\t" * n + "End Site", "\t" * n + "{", "\t" * n + "\tOFFSET 0 1 0", "\t" * n + "}"]
    for i in reversed(range(n)):
        lines.append("\t" * i + "}")
    lines += ["MOTION", f"Frames: {frames}", "Frame Time: 0.016667"]
    vals = rng.uniform(-30, 30, (frames, 3 + 3 * n))
    lines += [" ".join(f"{v:.4f}" for v in row) for row in vals]
    return "\n".join(lines) + "\n"


def main():
    os.makedirs(HERE, exist_ok=True)
    for name, text in HAND.items():
        with open(os.path.join(HERE, name), "w", newline="") as f:
            f.write(text)
    rng = np.random.default_rng(2024)
    with open(os.path.join(HERE, "10_star.bvh"), "w") as f:
        f.write(_star(rng=rng))
    with open(os.path.join(HERE, "11_deep_chain.bvh"), "w") as f:
        f.write(_deep_chain(rng=rng))
    toy = synth_corpus(3, 5, toy_skeleton(), T=16)
    ref = synth_corpus(4, 5, reference_skeleton(), T=24)
    orders = ["ZYX", "XYZ", "YXZ", "ZXY", "YZX", "XZY", "ZYX", "XYZ", "YXZ"]
    jobs = [(toy, toy_skeleton(), i) for i in range(4)] + [(ref, reference_skeleton(), i) for i in range(5)]
    for k, ((corp, top, i), order) in enumerate(zip(jobs, orders)):
        doc = bvh.motion_to_bvh(corp.motions[i], top, order=order, scale=0.01)
        kind = "toy" if top.J == 7 else "ref"
        bvh.write_bvh(os.path.join(HERE, f"{12 + k:02d}_{kind}_{corp.classes[corp.labels[i]]}_{order}.bvh"), doc)


if __name__ == "__main__":
    main()
