import pathlib

from setuptools import find_packages, setup

setup(
    name="sabayes",
    version="0.1.0",
    description="Selection-adjusted Bayesian inference: posteriors, risks and calibrated selection rules",
    packages=find_packages(where=".", exclude=["test", "test.*"]),
    python_requires=">=3.8",
    long_description=pathlib.Path("doc/usage.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    install_requires=["attrs",
                      "numpy",
                      "scipy>=1.6",
                      "pandas",
                      "sortedcontainers",
                      "statsmodels"],
    extras_require={ "test": ["pytest"] },
    entry_points={ "console_scripts": ["sabayes=sabayes.cli:main"] },
)
