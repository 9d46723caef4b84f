from timbre_lab.cli.config import build_section, env_overrides, load_config, read_config_file
from timbre_lab.cli.index import build_parser, main
