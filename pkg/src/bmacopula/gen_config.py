"""Dump the configuration schema, default configuration and fixtures to the config folder."""

from pathlib import Path

import ujson5

from bmacopula import consts
from bmacopula.models import DEFAULT_RUN_CONFIG, DEFAULT_SYNTHETIC_SPEC, PydSyntheticSpec
from bmacopula.utils import dump_config, dump_schema

if __name__ == "__main__":
    config_folder_path = Path(__file__).parent / consts.CONFIG_FOLDER
    config_folder_path.mkdir(parents=True, exist_ok=True)
    config_path: Path = config_folder_path / consts.SELF_CONFIG_FNAME
    schema_path: Path = config_folder_path / consts.SELF_CONFIG_SCHEMA_FNAME
    synth_path: Path = config_folder_path / consts.FIXTURE_SYNTH_FNAME
    dump_schema(schema_path)
    dump_config(config_path, DEFAULT_RUN_CONFIG)
    with open(synth_path, "w", encoding="utf8") as f:
        ujson5.dump(PydSyntheticSpec.dump_python(DEFAULT_SYNTHETIC_SPEC, mode="json"), f, indent=2)
    print(f"✅ Default configuration updated at {config_path}.")
    print(f"✅ Configuration schema updated at {schema_path}.")
    print(f"✅ Synthetic fixture spec updated at {synth_path}.")
