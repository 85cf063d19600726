import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

# Make the sibling oracles module importable from every test file.
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "shrubmap",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("shrubmap")
