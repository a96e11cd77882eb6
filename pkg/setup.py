import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()
with open("VERSION", "r") as fh:
    version = fh.read().strip()

setuptools.setup(
    name="robustpose",
    version=version,
    description=("Outlier-robust object pose estimation with a keypoint " +
                 "corrector, observable correctness certificates and " +
                 "certificate-gated self-training"),
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=("tests", "example")),
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.6",
        "torch>=1.10",
        "opencv-python-headless>=4.5",
    ],
    extras_require={
        "io": ["open3d>=0.15"],
        "plot": ["matplotlib>=3.3"],
        "test": ["pytest>=6"],
    },
    entry_points={
        "console_scripts": ["robustpose = robustpose.cli:main"],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Recognition"
    ],
    python_requires='>=3.8',
)
