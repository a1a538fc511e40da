import importlib
import sys


def check_dependencies():
    required_modules = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'librosa': 'librosa',
        'python-dotenv': 'dotenv',
        'packaging': 'packaging',
    }
    missing = []
    for pkg, module in required_modules.items():
        try:
            importlib.import_module(module)
        except ImportError:
            missing.append(pkg)
    return missing


def safe_print(msg: str, stream=None):
    """Print msg but silently ignore a closed or unwritable stream."""
    stream = stream or sys.stdout
    try:
        stream.write(msg + "\n")
    except (PermissionError, BrokenPipeError):
        try:
            sys.stderr.write(msg + "\n")
        except (PermissionError, BrokenPipeError):
            pass
