import os
import sys

# Under ctest, import the freshly built module rather than an installed copy.
_build = os.environ.get("RAIL_PYTHON_DIR")
if _build:
    sys.meta_path[:] = [f for f in sys.meta_path if "_editable_" not in type(f).__module__]
    sys.path.insert(0, _build)
    for name in [m for m in sys.modules if m == "rail" or m.startswith("rail.")]:
        del sys.modules[name]
