from setuptools import setup

setup(
    name="bsumkit",
    version="0.1.0",
    package_dir={"": "src"},
    packages=["bsumkit"],
    package_data={"bsumkit": ["configs/*.json", "data/*.mtx"]},
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "sqlite_utils",
        "parse",
        "inflect",
        "attrs",
        "cattrs<25",
        "typeguard==4.4.2",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["bsumkit=bsumkit.cli:main"]},
    author="bsumkit developers",
    description="Block successive upper bound minimization: drivers, surrogates, selection rules and diagnostics.",
    long_description=open("PACKAGE_README.md").read(),
    long_description_content_type="text/markdown",

    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
