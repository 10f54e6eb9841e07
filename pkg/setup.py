from setuptools import setup, find_packages

setup(
    name='toggle',
    version='0.1.0',
    package_dir={'': 'lmtools'},
    packages=find_packages(where='lmtools'),
    package_data={
        'toggle': ['configs/*.toml'],  # bundled run configurations 'default' and 'tiny'
    },
    install_requires=[
        'dask >=2023.2.0',
        'numpy >=1.24',
        'pandas >=2.2',
        'scikit-learn >1.3.1',
        'scipy >=1.10',
        'tomli >=1.1; python_version < "3.11"',
        'tqdm >=4.60',
        'xarray >2023.8.0',
    ],
    entry_points={
        'console_scripts': ['toggle=toggle.cli:main'],
    },
)
