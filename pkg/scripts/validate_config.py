import re
import sys
from pathlib import Path

# allow running as `python scripts/validate_config.py` from the repository root
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from solvers.errors import ConfigError  # noqa: E402
from solvers.experiment import load_config  # noqa: E402

REQUIRED_VARS = [
    'BANGBANG_LOG_LEVEL',
    'BANGBANG_OUTPUT_DIR',
    'OTEL_EXPORTER_OTLP_ENDPOINT',
    'OTEL_SERVICE_NAME',
]

SUSPICIOUS_PATTERNS = [
    (r'AKIA[0-9A-Z]{16}', 'AWS Access Key'),
    (r'sk-[a-zA-Z0-9]{48}', 'API Key'),
    (r'[A-Za-z0-9_-]{32,}', 'token'),
]


def validate_env_example(env_example=Path('.env.example')):
    """Validate .env.example file structure"""
    print("Validating .env.example")

    env_example = Path(env_example)
    if not env_example.exists():
        print(".env.example not found!")
        return False

    found_vars = set()
    issues = []

    with open(env_example, 'r') as f:
        for line_num, line in enumerate(f, 1):
            # skip comments and empty lines
            if line.strip().startswith('#') or not line.strip():
                continue

            if '=' in line:
                var_name, var_value = line.split('=', 1)
                var_name = var_name.strip()
                var_value = var_value.strip()
                found_vars.add(var_name)

                for pattern, desc in SUSPICIOUS_PATTERNS:
                    if re.search(pattern, var_value):
                        issues.append(f"Line {line_num}: Possible real {desc} in {var_name}")

    missing_vars = set(REQUIRED_VARS) - found_vars
    if missing_vars:
        issues.append(f"Missing required variables: {', '.join(sorted(missing_vars))}")

    if issues:
        print("\n Issues found in .env.example:\n")
        for issue in issues:
            print(f" - {issue}")
        return False

    print("✅ .env.example is valid!")
    print(f"   Found {len(found_vars)} environment variables")
    return True


def validate_configs(config_dir=Path('configs')):
    """Load every experiment JSON file through the configuration validator."""
    config_dir = Path(config_dir)
    paths = sorted(config_dir.glob('*.json'))
    print(f"Validating {len(paths)} experiment configs in {config_dir}")

    ok = True
    for path in paths:
        try:
            config = load_config(path)
        except ConfigError as e:
            print(f" - {e}")
            ok = False
            continue
        print(f"   {path.name}: {config.case}, u_b={config.u_b:g}, levels={list(config.levels)}")
    return ok


if __name__ == '__main__':
    results = [validate_env_example(), validate_configs()]
    sys.exit(0 if all(results) else 1)
