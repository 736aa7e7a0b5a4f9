import functools

from qoslab.config import resolve, set_dotted
from qoslab.simcore import run


def make_config(**dotted):
    """Build a ScenarioConfig from ``section__key=value`` overrides."""
    tree = {}
    for key, value in dotted.items():
        set_dotted(tree, key.replace("__", "."), value)
    return resolve(tree, source="test")


@functools.lru_cache(maxsize=None)
def _cached(items):
    thawed = {k: [list(p) for p in v] if isinstance(v, tuple) else v for k, v in items}
    return run(make_config(**thawed))


def run_cached(**dotted):
    """Traces are pure functions of the config, so tests may share them."""
    frozen = tuple(sorted((k, tuple(map(tuple, v)) if isinstance(v, list) else v) for k, v in dotted.items()))
    return _cached(frozen)
