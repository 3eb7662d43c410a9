"""Interpolated-rotation augmentation and its implied exact-orbit accounting.

A constrained network already emits identical outputs for every exact
transform of an input, so presenting one interpolated rotation effectively
presents its whole orbit.  The accounting here counts how many distinct
input versions a plan covers; materialising the exact orbit is only ever
needed for unconstrained baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .symmetry import SymmetryGroup
from .tensor import rotate_interpolated, transform


@dataclass(frozen=True)
class AugmentPlan:
    angles: tuple[float, ...]
    include_reflection: bool
    group: SymmetryGroup

    def __post_init__(self):
        a = tuple(float(x) for x in self.angles)
        if not all(np.isfinite(a)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "angles", a)


def _rotation_modulus(group: SymmetryGroup) -> float:
    kinds = {e.kind for e in group.elements}
    if "rot90" in kinds:
        return 90.0
    if "rot180" in kinds:
        return 180.0
    return 360.0


def implied_orbit_size(plan: AugmentPlan) -> int:
    """Distinct input versions the network effectively trains on.

    Each presented angle contributes one orbit of ``group.order`` versions;
    angles congruent modulo the group's own rotation step collapse into one
    orbit.  An empty angle list presents the original alone (one orbit).
    The reflection flag presents mirrored copies: for groups that already
    contain reflections these fold into the angle orbits and only add the
    unrotated family when no zero angle is present; for rotation-only
    groups they are genuinely new and double the coverage.
    """
    mod = _rotation_modulus(plan.group)
    base = plan.angles if plan.angles else (0.0,)
    reps = {round(a % mod, 9) % mod for a in base}
    count = len(reps) * plan.group.order
    if plan.include_reflection:
        has_reflection = any(e.kind.startswith("reflect") for e in plan.group.elements)
        if has_reflection:
            if 0.0 not in reps:
                count += plan.group.order
        else:
            count *= 2
    return count


def expand(plan: AugmentPlan, image, materialize_orbit: bool = False) -> list[np.ndarray]:
    """Materialise the augmentation stream for one image.

    One interpolated rotation per angle.  Exact orbit members are not
    materialised unless ``materialize_orbit`` is set: a constrained network
    covers them for free, and expanding them is only useful when feeding an
    unconstrained baseline the equivalent data budget.
    """
    angles = plan.angles if plan.angles else (0.0,)
    rotated = [rotate_interpolated(image, a) for a in angles]
    if not materialize_orbit:
        return rotated
    out = []
    for img in rotated:
        for e in plan.group.elements:
            out.append(transform(img, e))
    return out
