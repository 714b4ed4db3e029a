"""
Setup for mpns-lab.
"""
from setuptools import find_packages, setup

from mpns_lab import __version__

with open("README.rst", "r") as readme:
    desc = readme.read()

setup(
    name="mpns-lab",
    version=__version__,
    packages=find_packages(),
    include_package_data=True,
    entry_points="""
        [console_scripts]
        mpns-lab=mpns_lab.main:cli
    """,
    install_requires=[
        "click",
        "numpy",
        "pandas",
        "pyyaml",
        "smart_open[s3]",
    ],
    license="AGPLv3",
    description="Trains and ablates multimodal representations guided by the probability of necessity and sufficiency",
    long_description=desc,
    long_description_content_type="text/x-rst",
    python_requires=">=3.10",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU Affero General Public License v3",
        "Operating System :: OS Independent",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
