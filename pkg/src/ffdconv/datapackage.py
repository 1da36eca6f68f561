"""Frictionless manifests for dataset directories and evaluation reports."""

import logging
from pathlib import Path
from typing import Any

from frictionless import Dialect, Package, Resource, Schema, formats, validate
from frictionless.fields import IntegerField, NumberField, StringField

from .exceptions import DataError

logger = logging.getLogger(__name__)

PACKAGE_FILE = "datapackage.json"

FIELD_CLASSES = {
    "string": StringField,
    "number": NumberField,
    "integer": IntegerField,
}

ANNOTATION_FIELDS = [
    ("filename", "string"),
    ("onset", "number"),
    ("offset", "number"),
    ("event_label", "string"),
]

CLIP_FIELDS = [
    ("filename", "string"),
    ("features", "string"),
    ("labels", "string"),
    ("events", "integer"),
]


def build_schema(columns: list[tuple[str, str]], custom: dict[str, Any] | None = None) -> Schema:
    """Schema from (name, frictionless type) pairs."""
    schema = Schema(fields=[FIELD_CLASSES[kind](name=name) for name, kind in columns])
    if custom:
        schema.custom = custom
    return schema


def _table(
    name: str,
    filename: str,
    columns: list[tuple[str, str]],
    custom: dict[str, Any] | None = None,
) -> Resource:
    resource = Resource(name=name, path=filename, schema=build_schema(columns, custom))
    if filename.endswith(".tsv"):
        resource.dialect = Dialect(controls=[formats.CsvControl(delimiter="\t")])
    return resource


def write_dataset_package(directory: Path, class_names: list[str], label_hop: float) -> None:
    """Describe annotations.tsv and clips.csv; class names and label hop ride in the schema."""
    package = Package(
        name="ffdconv-dataset",
        title="Synthetic frequency-banded SED dataset",
        resources=[
            _table(
                "annotations",
                "annotations.tsv",
                ANNOTATION_FIELDS,
                {"class_names": list(class_names), "label_hop": label_hop},
            ),
            _table("clips", "clips.csv", CLIP_FIELDS),
        ],
    )
    package.to_json(str(Path(directory) / PACKAGE_FILE))


def load_package(directory: Path) -> Package:
    path = Path(directory) / PACKAGE_FILE
    if not path.exists():
        raise DataError(f"{PACKAGE_FILE} not found in {directory}")
    return Package(str(path))


def read_dataset_metadata(directory: Path) -> tuple[list[str], float]:
    """Class names and label hop recorded in a dataset manifest."""
    package = load_package(directory)
    resource = next((r for r in package.resources if r.name == "annotations"), None)
    if resource is None:
        raise DataError(f"{directory}: manifest has no annotations resource")
    custom = getattr(resource.schema, "custom", {}) or {}
    # Frictionless may nest custom properties one level down
    if "custom" in custom:
        custom = custom["custom"]
    if "class_names" not in custom or "label_hop" not in custom:
        raise DataError(f"{directory}: manifest lacks class_names/label_hop")
    return list(custom["class_names"]), float(custom["label_hop"])


def write_report_package(
    directory: Path, name: str, tables: list[tuple[str, str, list[tuple[str, str]]]]
) -> None:
    """Describe CSV tables given as (resource name, file name, columns)."""
    package = Package(
        name=name,
        resources=[_table(res, filename, columns) for res, filename, columns in tables],
    )
    package.to_json(str(Path(directory) / PACKAGE_FILE))


def validate_package(path: Path) -> list[str]:
    """Validate a manifest (or the directory holding one); returns error messages."""
    path = Path(path)
    package_path = path / PACKAGE_FILE if path.is_dir() else path
    if not package_path.exists():
        raise DataError(f"{PACKAGE_FILE} not found in {path}")
    report = validate(str(package_path.absolute()))
    if report.valid:
        return []
    return [f"{kind}: {message}" for kind, message in report.flatten(["type", "message"])]
