#!/usr/bin/env python3
"""
Manifold Landmarking Startup Script
Unified launcher for single runs, sweeps, verification checks and the results app
"""

import sys
import subprocess
import argparse
import os
import venv
from pathlib import Path

PROJECT_ROOT = Path(__file__).parent

# subcommand -> (pipeline script, leading arguments)
COMMANDS = {
    "run": ("run_landmark.py", ["run"]),
    "signal": ("run_landmark.py", ["signal"]),
    "pairwise": ("run_landmark.py", ["pairwise"]),
    "net": ("run_landmark.py", ["net"]),
    "profile": ("run_landmark.py", ["profile"]),
    "sweep": ("run_sweep.py", []),
    "verify": ("run_verify.py", []),
}


def check_python_version():
    """Check if Python version is 3.9 or higher."""
    if sys.version_info < (3, 9):
        print("❌ Python 3.9+ is required. Current version:", sys.version)
        return False
    print(f"✅ Python {sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro} detected")
    return True


def get_venv_python(venv_path):
    """Get the Python executable path from virtual environment."""
    if os.name == 'nt':  # Windows
        return venv_path / "Scripts" / "python.exe"
    else:  # Unix/Linux/macOS
        return venv_path / "bin" / "python"


def setup_virtual_environment():
    """Create the virtual environment if it doesn't exist."""
    venv_path = PROJECT_ROOT / "venv"
    if venv_path.exists():
        print("✅ Virtual environment already exists")
        return get_venv_python(venv_path)

    print("🔧 Creating virtual environment...")
    try:
        venv.create(venv_path, with_pip=True)
        print("✅ Virtual environment created successfully")
        return get_venv_python(venv_path)
    except Exception as e:
        print(f"❌ Failed to create virtual environment: {e}")
        return None


def check_dependencies(python_executable):
    """Install requirements if any of the key packages is missing."""
    requirements_file = PROJECT_ROOT / "requirements.txt"
    if not requirements_file.exists():
        print("⚠️  No requirements.txt found")
        return True

    print("🔍 Checking installed packages...")
    key_packages = ["numpy", "scipy", "pandas", "duckdb", "streamlit", "plotly"]
    missing_packages = []
    for package in key_packages:
        try:
            result = subprocess.run([
                str(python_executable), "-c", f"import {package}"
            ], capture_output=True, text=True, timeout=30)
            if result.returncode != 0:
                missing_packages.append(package)
        except (subprocess.TimeoutExpired, FileNotFoundError):
            missing_packages.append(package)

    if not missing_packages:
        print("✅ All key dependencies are installed")
        return True

    print(f"📦 Installing missing packages: {', '.join(missing_packages)}")
    try:
        subprocess.run([
            str(python_executable), "-m", "pip", "install", "-r", str(requirements_file)
        ], check=True)
        print("✅ Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Failed to install dependencies: {e}")
        return False


def create_directories():
    """Create the data and log directories."""
    for dir_name in ["data", "logs"]:
        dir_path = PROJECT_ROOT / dir_name
        if not dir_path.exists():
            dir_path.mkdir(parents=True, exist_ok=True)
            print(f"📁 Created directory: {dir_name}")


def setup_project():
    """Virtual environment, dependencies and directories."""
    print("📐 Manifold Landmarking Setup")
    print("=" * 50)
    if not check_python_version():
        return None
    venv_python = setup_virtual_environment()
    if not venv_python or not check_dependencies(venv_python):
        return None
    create_directories()
    print("✅ Project setup completed successfully!")
    print("=" * 50)
    return venv_python


def run_script(command, extra_args, python_executable=None):
    """Run one pipeline script in a subprocess and return its exit code."""
    if python_executable is None:
        python_executable = sys.executable
    script, leading = COMMANDS[command]
    print(f"🔄 Starting {command}...")
    result = subprocess.run(
        [str(python_executable), str(PROJECT_ROOT / "pipeline" / script)] + leading + list(extra_args),
        cwd=str(PROJECT_ROOT),
    )
    if result.returncode == 0:
        print(f"✅ {command} completed successfully!")
    else:
        print(f"❌ {command} finished with exit code {result.returncode}")
    return result.returncode


def start_app(python_executable=None):
    """Start the Streamlit results app."""
    if python_executable is None:
        python_executable = sys.executable
    print("🚀 Starting Streamlit web application...")
    subprocess.run([
        str(python_executable), "-m", "streamlit", "run",
        str(PROJECT_ROOT / "app" / "app_local.py"),
        "--server.headless=false"
    ])
    return 0


def main():
    parser = argparse.ArgumentParser(
        description="Manifold Landmarking Control",
        epilog="Arguments after the command are passed to the pipeline script, e.g. "
               "'start.py sweep configs/scaling_in_D.toml --workers 4' or 'start.py verify --check all'.",
    )
    parser.add_argument(
        "command",
        choices=sorted(COMMANDS) + ["app", "setup"],
        help="run, signal, pairwise, net, profile (single experiments), sweep, verify, app (results browser), setup",
    )
    parser.add_argument(
        "--skip-setup",
        action="store_true",
        help="Skip the automatic setup and use the current Python"
    )
    args, extra_args = parser.parse_known_args()

    if args.command == "setup":
        sys.exit(0 if setup_project() else 1)

    python_executable = sys.executable
    if not args.skip_setup:
        venv_python = setup_project()
        if venv_python and venv_python.exists():
            python_executable = venv_python
        else:
            print("⚠️  Setup failed, falling back to system Python")
    else:
        create_directories()

    print("\n📐 Manifold Landmarking")
    print("=" * 50)

    if args.command == "app":
        sys.exit(start_app(python_executable))
    sys.exit(run_script(args.command, extra_args, python_executable))


if __name__ == "__main__":
    main()
