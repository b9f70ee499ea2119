"""Synthetic multi-center cardiac phantoms and the on-disk dataset container."""
from __future__ import annotations

import json
import math
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import ContainerError, read_tensor, write_tensor
from .kspace import CoilSensitivities, KSpaceVolume, SamplingMask, forward_encode, make_mask

SIZE = 64
VENDORS = ("GE", "Philips", "Siemens", "UIH")
PROTOCOLS = ("cine", "lge", "mapping", "perfusion")
DATASET_FORMAT = "hamr-dataset"
DATASET_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class CenterProfile:
    center_id: str
    vendor_tag: str
    field_strength: float
    noise_sigma: float
    bias_field_strength: float
    coil_count: int
    contrast_gamma: float = 1.0
    mask_kind: str = "uniform"
    accel: float = 4.0

    def __post_init__(self):
        if self.vendor_tag not in VENDORS:
            raise ValueError(f"unknown vendor {self.vendor_tag!r}")
        if self.field_strength not in (1.5, 3.0, 5.0):
            raise ValueError(f"field strength {self.field_strength} not in (1.5, 3.0, 5.0)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.bias_field_strength <= 0.5:
            raise ValueError("bias_field_strength must lie in [0, 0.5]")
        if self.coil_count not in (1, 4, 8):
            raise ValueError("coil_count must be 1, 4 or 8")

    @classmethod
    def from_snr(cls, center_id, vendor_tag, field_strength, sigma0, **kw) -> "CenterProfile":
        """Noise scales inversely with field strength: sigma = sigma0 * 3.0 / B0."""
        return cls(center_id, vendor_tag, field_strength, sigma0 * 3.0 / field_strength, **kw)


@dataclass
class ProtocolProfile:
    protocol_id: str
    frames: int
    dynamics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol_id not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol_id!r}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


DEFAULT_PROTOCOLS = {
    "cine": ProtocolProfile("cine", 5, {"wall_amplitude": 0.25}),
    "lge": ProtocolProfile("lge", 1, {"scar_intensity": 1.0, "myo_nulled": 0.08}),
    "mapping": ProtocolProfile("mapping", 3, {"echo_times": [0.0, 30.0, 60.0],
                                              "t2": {"body": 40.0, "myo": 50.0, "blood": 200.0}}),
    "perfusion": ProtocolProfile("perfusion", 5, {"blood_peak": 2, "myo_peak": 3,
                                                  "blood_gain": 0.8, "myo_gain": 0.35}),
}


def default_fleet(sigma0: float = 0.015) -> dict[str, CenterProfile]:
    """Five centers with mixed vendors, fields, coils and sampling patterns."""
    mk = CenterProfile.from_snr
    return {c.center_id: c for c in [
        mk("C001", "UIH", 3.0, sigma0, bias_field_strength=0.2, coil_count=8,
           contrast_gamma=1.0, mask_kind="uniform", accel=4.0),
        mk("C002", "Siemens", 3.0, sigma0, bias_field_strength=0.3, coil_count=4,
           contrast_gamma=0.85, mask_kind="kt_gaussian", accel=6.0),
        mk("C003", "UIH", 5.0, sigma0, bias_field_strength=0.1, coil_count=8,
           contrast_gamma=1.15, mask_kind="radial", accel=8.0),
        mk("C004", "Siemens", 1.5, sigma0, bias_field_strength=0.35, coil_count=4,
           contrast_gamma=0.9, mask_kind="kt_gaussian", accel=6.0),
        mk("C005", "GE", 1.5, sigma0, bias_field_strength=0.15, coil_count=1,
           contrast_gamma=1.1, mask_kind="uniform", accel=4.0),
    ]}


@dataclass
class Case:
    case_id: str
    center_id: str
    protocol_id: str
    patient_id: str
    gt_image: np.ndarray  # real [T,H,W]
    sens: CoilSensitivities
    y: KSpaceVolume

    @property
    def mask(self) -> SamplingMask:
        return self.y.mask

    @property
    def frames(self) -> int:
        return self.gt_image.shape[0]


@dataclass
class Dataset:
    cases: list[Case]
    centers: dict[str, CenterProfile]
    protocols: dict[str, ProtocolProfile]

    def __len__(self):
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def __getitem__(self, i):
        return self.cases[i]

    def subset(self, cases) -> "Dataset":
        return Dataset(list(cases), self.centers, self.protocols)

    def vendor_of(self, case: Case) -> str:
        return self.centers[case.center_id].vendor_tag


# ------------------------------------------------------------------ phantoms

def _seed(*parts) -> np.random.SeedSequence:
    """Stable seed sequence from ints and strings (no reliance on hash())."""
    ints = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(ints)


def _grid(n=SIZE):
    c = (np.arange(n) - n / 2 + 0.5) / (n / 2)
    return np.meshgrid(c, c, indexing="ij")  # rows, cols in [-1, 1]


def _anatomy(patient_id: str, seed: int) -> dict:
    rng = np.random.default_rng(_seed("patient", patient_id, seed))
    return {
        "body": (0.80 + 0.06 * rng.standard_normal(), 0.62 + 0.05 * rng.standard_normal()),
        "body_shift": tuple(0.04 * rng.standard_normal(2)),
        "lv_center": (0.05 * rng.standard_normal() - 0.05, 0.1 + 0.05 * rng.standard_normal()),
        "r_blood": 0.20 + 0.02 * rng.standard_normal(),
        "wall": 0.11 + 0.01 * rng.standard_normal(),
        "rv": (0.22 + 0.02 * rng.standard_normal(), 0.14 + 0.02 * rng.standard_normal()),
        "intensity": {"body": 0.35 + 0.04 * rng.standard_normal(),
                      "myo": 0.55 + 0.05 * rng.standard_normal(),
                      "blood": 0.9 + 0.05 * rng.standard_normal()},
        "texture": rng.standard_normal(6),
        "scar_angle": rng.uniform(0, 2 * math.pi),
    }


def _tissues(anat: dict, r_scale: float = 1.0):
    """Binary tissue maps (body, myocardium, blood, scar-sector) at one cardiac phase."""
    yy, xx = _grid()
    a, b = anat["body"]
    sy, sx = anat["body_shift"]
    body = ((yy - sy) / a) ** 2 + ((xx - sx) / b) ** 2 <= 1.0
    cy, cx = anat["lv_center"]
    r = np.hypot(yy - cy, xx - cx)
    r_in = anat["r_blood"] * r_scale
    blood = r <= r_in
    myo = (r > r_in) & (r <= r_in + anat["wall"] * (2.0 - r_scale))
    ra, rb = anat["rv"]
    rv = ((yy - cy) / ra) ** 2 + ((xx - cx + r_in + anat["wall"] + rb * 0.9) / rb) ** 2 <= 1.0
    blood = blood | (rv & ~myo)
    ang = np.arctan2(yy - cy, xx - cx)
    sector = np.cos(ang - anat["scar_angle"]) > math.cos(math.pi / 5)
    return body, myo, blood, myo & sector


def _texture(anat):
    yy, xx = _grid()
    c = anat["texture"]
    return 1.0 + 0.06 * (c[0] * np.sin(3 * xx + c[1]) * np.cos(2 * yy + c[2])
                         + c[3] * np.sin(5 * yy + c[4]) * np.cos(4 * xx + c[5])) / 2


def phantom_frames(protocol: ProtocolProfile, anat: dict) -> np.ndarray:
    """Analytic frames [T,H,W] before center effects."""
    dyn = protocol.dynamics
    inten = anat["intensity"]
    frames = []
    for t in range(protocol.frames):
        r_scale = 1.0
        w_body, w_myo, w_blood, w_scar = inten["body"], inten["myo"], inten["blood"], None
        if protocol.protocol_id == "cine":
            r_scale = 1.0 + dyn.get("wall_amplitude", 0.25) * math.sin(2 * math.pi * t / protocol.frames)
        elif protocol.protocol_id == "lge":
            w_myo = dyn.get("myo_nulled", 0.08)
            w_blood = 0.5 * inten["blood"]
            w_scar = dyn.get("scar_intensity", 1.0)
        elif protocol.protocol_id == "mapping":
            te = dyn["echo_times"][t % len(dyn["echo_times"])]
            t2 = dyn["t2"]
            w_body *= math.exp(-te / t2["body"])
            w_myo *= math.exp(-te / t2["myo"])
            w_blood *= math.exp(-te / t2["blood"])
        elif protocol.protocol_id == "perfusion":
            def bolus(peak):
                return math.exp(-0.5 * ((t - peak) / 1.0) ** 2)
            w_blood = 0.3 * inten["blood"] + dyn["blood_gain"] * bolus(dyn["blood_peak"])
            w_myo = 0.4 * inten["myo"] + dyn["myo_gain"] * bolus(dyn["myo_peak"])
            w_body = 0.6 * inten["body"]
        body, myo, blood, scar = _tissues(anat, r_scale)
        img = np.where(body, w_body, 0.0)
        img = np.where(myo, w_myo, img)
        img = np.where(blood, w_blood, img)
        if w_scar is not None:
            img = np.where(scar, w_scar, img)
        frames.append(img * np.where(body, _texture(anat), 1.0))
    return np.stack(frames)


def bias_field(center: CenterProfile) -> np.ndarray:
    """1 + b * p(x, y) with p a zero-mean low-order polynomial scaled to max |p| = 1."""
    rng = np.random.default_rng(_seed("bias", center.center_id))
    yy, xx = _grid()
    c = rng.standard_normal(5)
    p = c[0] * xx + c[1] * yy + c[2] * xx * yy + c[3] * xx ** 2 + c[4] * yy ** 2
    p -= p.mean()
    p /= np.abs(p).max()
    return 1.0 + center.bias_field_strength * p


def coil_maps(center: CenterProfile) -> CoilSensitivities:
    """Smooth complex maps normalised to unit root-sum-of-squares everywhere."""
    rng = np.random.default_rng(_seed("coils", center.center_id))
    yy, xx = _grid()
    n = center.coil_count
    maps = []
    for c in range(n):
        ang = 2 * math.pi * c / n + 0.3 * rng.standard_normal()
        py, px = 1.2 * math.sin(ang), 1.2 * math.cos(ang)
        mag = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * 0.9 ** 2)) if n > 1 else np.ones_like(xx)
        phase = rng.uniform(-math.pi, math.pi) + 0.6 * (rng.standard_normal() * xx + rng.standard_normal() * yy)
        maps.append(mag * np.exp(1j * phase))
    maps = np.stack(maps)
    maps /= np.sqrt((np.abs(maps) ** 2).sum(axis=0, keepdims=True))
    return CoilSensitivities(maps)


def generate_case(center: CenterProfile, protocol: ProtocolProfile, patient_id: str,
                  accel: float | None = None, mask_kind: str | None = None,
                  seed: int = 0, acs_lines: int = 8) -> Case:
    """One reproducible case; the image is the protocol phantom with the center's
    contrast curve and bias field applied."""
    if not isinstance(center, CenterProfile):
        raise DatasetError(f"unknown center {center!r}")
    if not isinstance(protocol, ProtocolProfile) or protocol.protocol_id not in PROTOCOLS:
        raise DatasetError(f"unknown protocol {protocol!r}")
    accel = center.accel if accel is None else accel
    mask_kind = center.mask_kind if mask_kind is None else mask_kind
    anat = _anatomy(patient_id, seed)
    gt = phantom_frames(protocol, anat) ** center.contrast_gamma * bias_field(center)[None]
    sens = coil_maps(center)
    rng = np.random.default_rng(_seed("case", center.center_id, protocol.protocol_id, patient_id, seed))
    mask_seed = int(rng.integers(2 ** 31))
    mask = make_mask(mask_kind, gt.shape, accel, acs_lines, seed=mask_seed)
    full = np.fft.fft2(gt[:, None] * sens.maps[None], norm="ortho")
    noise = center.noise_sigma / math.sqrt(2) * (rng.standard_normal(full.shape)
                                                 + 1j * rng.standard_normal(full.shape))
    y = (full + noise) * mask.frames(gt.shape[0])[:, None]
    case_id = f"{center.center_id}_{patient_id}_{protocol.protocol_id}"
    return Case(case_id, center.center_id, protocol.protocol_id, patient_id,
                gt, sens, KSpaceVolume(y, mask))


def generate_dataset(centers: dict[str, CenterProfile] | None = None,
                     patients_per_center: dict[str, int] | None = None,
                     protocols: dict[str, ProtocolProfile] | None = None,
                     protocols_per_patient: int = 2, seed: int = 0) -> Dataset:
    """Each patient gets ``protocols_per_patient`` protocols, cycling through all of them."""
    centers = centers or default_fleet()
    protocols = protocols or DEFAULT_PROTOCOLS
    patients_per_center = patients_per_center or {"C001": 5, "C002": 5, "C003": 4, "C004": 3, "C005": 4}
    names = list(protocols)
    cases = []
    for cid in sorted(patients_per_center):
        if cid not in centers:
            raise DatasetError(f"unknown center {cid!r}")
        for k in range(patients_per_center[cid]):
            patient = f"{cid}P{k:03d}"
            for j in range(protocols_per_patient):
                proto = protocols[names[(k * protocols_per_patient + j) % len(names)]]
                cases.append(generate_case(centers[cid], proto, patient, seed=seed))
    return Dataset(cases, dict(centers), dict(protocols))


# ------------------------------------------------------------------- storage

def write_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in dataset.cases:
        tensors = {}
        for key, arr in (("gt", case.gt_image), ("sens", case.sens.maps),
                         ("y", case.y.data), ("mask", case.mask.pattern)):
            tensors[key] = write_tensor(directory / f"{case.case_id}.{key}.bin", arr)
        entries.append({
            "case_id": case.case_id, "center_id": case.center_id,
            "protocol_id": case.protocol_id, "patient_id": case.patient_id,
            "mask": {"kind": case.mask.kind, "target_accel": case.mask.target_accel,
                     "acs_lines": case.mask.acs_lines},
            "tensors": tensors,
        })
    manifest = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION,
        "centers": {k: asdict(v) for k, v in sorted(dataset.centers.items())},
        "protocols": {k: asdict(v) for k, v in sorted(dataset.protocols.items())},
        "cases": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{mpath}: corrupt or unreadable manifest ({exc})") from exc
    try:
        if manifest["format"] != DATASET_FORMAT or manifest["version"] != DATASET_VERSION:
            raise DatasetError(f"{mpath}: unsupported format {manifest['format']!r} "
                               f"version {manifest['version']!r}")
        centers = {k: CenterProfile(**v) for k, v in manifest["centers"].items()}
        protocols = {k: ProtocolProfile(**v) for k, v in manifest["protocols"].items()}
        cases = []
        for e in manifest["cases"]:
            arrays = {}
            for key in ("gt", "sens", "y", "mask"):
                entry = e["tensors"][key]
                try:
                    arrays[key] = read_tensor(directory / entry["file"], entry)
                except ContainerError as exc:
                    raise DatasetError(f"case {e['case_id']} tensor {key!r}: {exc}") from exc
            m = e["mask"]
            mask = SamplingMask(m["kind"], arrays["mask"], float(m["target_accel"]), int(m["acs_lines"]))
            cases.append(Case(e["case_id"], e["center_id"], e["protocol_id"], e["patient_id"],
                              arrays["gt"], CoilSensitivities(arrays["sens"]),
                              KSpaceVolume(arrays["y"], mask)))
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{mpath}: malformed manifest ({exc!r})") from exc
    return Dataset(cases, centers, protocols)


# ------------------------------------------------------------------ splitting

def split_by_center(dataset: Dataset, target_frac: float = 0.15) -> tuple[Dataset, Dataset]:
    """Hold out the single center whose share of cases is closest to ``target_frac``."""
    counts = defaultdict(int)
    for c in dataset.cases:
        counts[c.center_id] += 1
    if len(counts) < 2:
        raise DatasetError("center split needs at least two centers")
    n = len(dataset.cases)
    held = min(sorted(counts), key=lambda cid: abs(counts[cid] / n - target_frac))
    train = [c for c in dataset.cases if c.center_id != held]
    val = [c for c in dataset.cases if c.center_id == held]
    return dataset.subset(train), dataset.subset(val)


def split_by_patient(dataset: Dataset, val_patients_per_center: int = 1,
                     seed: int = 0) -> tuple[Dataset, Dataset]:
    """Move ``val_patients_per_center`` seeded-random patients of every center into a
    validation split; the two splits never share a patient."""
    if val_patients_per_center < 1:
        raise ValueError("need at least one validation patient per center")
    rng = np.random.default_rng(seed)
    patients = defaultdict(set)
    for c in dataset.cases:
        patients[c.center_id].add(c.patient_id)
    held = set()
    for cid in sorted(patients):
        pids = sorted(patients[cid])
        if len(pids) <= val_patients_per_center:
            raise DatasetError(f"center {cid} has too few patients ({len(pids)}) to split")
        held.update(pids[i] for i in sorted(rng.permutation(len(pids))[:val_patients_per_center]))
    train = [c for c in dataset.cases if c.patient_id not in held]
    val = [c for c in dataset.cases if c.patient_id in held]
    return dataset.subset(train), dataset.subset(val)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_sample(dataset: Dataset, frac: float, seed: int = 0) -> Dataset:
    """Keep max(1, round(frac * n)) cases of every (center, vendor, protocol) stratum,
    spreading picks across patients round-robin."""
    if not 0 < frac <= 1:
        raise ValueError("frac must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    strata = defaultdict(list)
    for i, c in enumerate(dataset.cases):
        strata[(c.center_id, dataset.vendor_of(c), c.protocol_id)].append(i)
    keep = set()
    for key in sorted(strata):
        idx = strata[key]
        k = max(1, _round_half_up(frac * len(idx)))
        by_patient = defaultdict(list)
        for i in idx:
            by_patient[dataset.cases[i].patient_id].append(i)
        patients = sorted(by_patient)
        order = [patients[j] for j in rng.permutation(len(patients))]
        queues = [list(rng.permutation(by_patient[p])) for p in order]
        picked = []
        while len(picked) < k:
            for q in queues:
                if q and len(picked) < k:
                    picked.append(int(q.pop(0)))
        keep.update(picked)
    return dataset.subset(c for i, c in enumerate(dataset.cases) if i in keep)


def check_forward_consistency(case: Case) -> float:
    """Max deviation of sampled k-space from the forward model (zero for noiseless cases)."""
    pred = forward_encode(case.gt_image.astype(np.complex128), case.sens, case.mask).data
    return float(np.abs(pred - case.y.data).max())
