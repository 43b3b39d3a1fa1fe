#!/usr/bin/env python3
"""
Test script to verify all imports work correctly
"""

import importlib
import sys

MODULES = [
    "config",
    "src.utils",
    "src.errors",
    "src.sphere_calculus",
    "src.fields",
    "src.model",
    "src.initial_conditions",
    "src.kinetic_solver",
    "src.particle_sim",
    "src.snapshot_io",
    "src.experiments_cli",
]

THIRD_PARTY = ["numpy", "scipy", "psutil", "filelock"]


def test_imports():
    """Every project module and third-party dependency imports"""
    print("Testing imports...")
    for name in THIRD_PARTY + MODULES:
        importlib.import_module(name)
        print(f"   ✓ {name} imported successfully")


def test_logger():
    """Test logger functionality"""
    from src.utils import setup_logger

    logger = setup_logger("test")
    logger.info("Test log message")
    assert logger.handlers
    assert setup_logger("test") is logger


def test_system_info():
    from src.utils import content_hash, get_system_info

    info = get_system_info()
    assert "error" not in info
    assert info["cpu_count"] >= 1
    assert content_hash([b"a", b"bc"]) != content_hash([b"ab", b"c"])


def main():
    """Main test function"""
    print("vicsek-kinetics Import Test")
    print("=" * 50)

    try:
        test_imports()
        test_logger()
        test_system_info()
    except Exception as e:
        print(f"\n✗ Import test failed: {e}")
        print("Run: pip install -r requirements.txt")
        return 1

    print("\n" + "=" * 50)
    print("✓ All imports passed. Try: python vicsek_kinetics.py equilibria --config configs/equilibria.cfg")
    return 0


if __name__ == "__main__":
    sys.exit(main())
