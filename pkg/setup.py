from setuptools import setup, find_packages

setup(
    name="quantreg",
    version="1.0.0",
    description="Quantization-aware weight regularizers and weight-sharing compression for small CNNs",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.26.0",
        "pydantic>=2.5.0",
        "loguru>=0.7.0",
        "python-dotenv>=1.0.0",
        "matplotlib>=3.8.0",
    ],
    extras_require={
        "dev": ["pytest>=7.4.0"],
    },
    entry_points={
        "console_scripts": [
            "quantreg=quantreg.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
