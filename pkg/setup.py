from setuptools import setup, find_packages
from pathlib import Path

VERSION = '0.1.0'
DESCRIPTION = "Lossless compression benchmark for IoT telemetry: a Snappy block codec, a throttled push/pull link and a transmit-versus-compute energy model."
long_description = (Path(__file__).parent / "README.md").read_text()

# Read dependencies from requirements.txt
requirements = (Path(__file__).parent / "requirements.txt").read_text().splitlines()

# Setting up
setup(
    name="iot_compression_bench",
    version=VERSION,
    description=DESCRIPTION,
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=("tests",)),
    include_package_data=True,
    package_data={'': ['requirements.txt']},
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "icb=iot_compression_bench.cli:main",
        ],
    },
    keywords=['iot', 'compression', 'snappy', 'benchmark', 'sensor-networks', 'telemetry'],
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Operating System :: OS Independent",
        "Topic :: System :: Archiving :: Compression",
        "Topic :: System :: Benchmark",
    ],
    python_requires='>=3.10',
)
