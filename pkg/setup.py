from setuptools import find_packages, setup

setup(
    name='bgrl',
    version='1.0.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    description='Behavior-guided reinforcement learning with smoothed Wasserstein embeddings',
    install_requires=[
        'numpy >= 2.0',
        'scipy >= 1.13',
        'POT >= 0.9.4',
        'pydantic >= 2.7',
        'pydantic-settings >= 2.3',
        'python-dotenv >= 1.0',
        'click >= 8.1',
        'tqdm >= 4.48.0',
    ],
    extras_require={'test': ['pytest >= 8.0', 'hypothesis >= 6.100']},
    entry_points={'console_scripts': ['bgrl = bgrl.cli.main:main']},
    python_requires='>=3.10',
)
