from setuptools import setup, find_packages

setup(
    name="pyfedcdp",
    version="0.1.0",
    description="Federated learning with per-example differential privacy",
    author="PyFedCDP contributors",
    packages=find_packages(include=["pyfedcdp", "pyfedcdp.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pandas>=1.5",
        "httpx>=0.24.0",
        "aiofiles>=23.2.1",
    ],
    entry_points={"console_scripts": ["pyfedcdp=pyfedcdp.cli:main_entry"]},
    python_requires=">=3.10",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
