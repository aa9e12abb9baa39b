"""Pinhole cameras, posed target views, and their JSON/PNG interchange.

A view set is a JSON list of records {image_path, width, height, fx, fy,
cx, cy, rotation (9 floats, row-major world-to-camera), translation (3)},
with image paths resolved relative to the JSON file. Images are 8-bit PNG
on disk and [0, 1] float arrays in memory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera image dimensions must be >= 1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (max deviation {err:.2e})")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class View:
    camera: Camera
    target: np.ndarray  # (H, W, 3) in [0, 1]

    def __post_init__(self):
        self.target = np.ascontiguousarray(self.target, dtype=np.float64)
        if self.target.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(
                f"target shape {self.target.shape} does not match camera "
                f"{self.camera.height}x{self.camera.width}"
            )


def look_at_camera(position, target, width: int, height: int, fov_deg: float,
                   up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera at `position` looking toward `target`; fov is horizontal."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("camera position coincides with look-at target")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    # Rows: camera x (right), y (down), z (forward) in world coordinates.
    rot = np.stack([right, down, forward])
    trans = -rot @ position
    fx = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2)
    return Camera(width, height, fx, fx, width / 2.0, height / 2.0, rot, trans)


def load_image(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return img / 255.0


def save_image(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def load_views(json_path) -> list[View]:
    base = os.path.dirname(os.path.abspath(json_path))
    with open(json_path) as fh:
        records = json.load(fh)
    views = []
    for rec in records:
        cam = Camera(
            width=int(rec["width"]), height=int(rec["height"]),
            fx=float(rec["fx"]), fy=float(rec["fy"]),
            cx=float(rec["cx"]), cy=float(rec["cy"]),
            rotation=np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(rec["translation"], dtype=np.float64),
        )
        target = load_image(os.path.join(base, rec["image_path"]))
        views.append(View(cam, target))
    return views


def save_views(views: list[View], json_path, image_prefix="view") -> None:
    """Writes targets as PNGs next to the JSON and the view records."""
    base = os.path.dirname(os.path.abspath(json_path))
    os.makedirs(base, exist_ok=True)
    records = []
    for i, view in enumerate(views):
        name = f"{image_prefix}_{i:03d}.png"
        save_image(view.target, os.path.join(base, name))
        cam = view.camera
        records.append({
            "image_path": name,
            "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "rotation": [float(v) for v in cam.rotation.reshape(-1)],
            "translation": [float(v) for v in cam.translation],
        })
    with open(json_path, "w") as fh:
        json.dump(records, fh, indent=1)
