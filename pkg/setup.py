#!/usr/bin/env python3
"""
Setup script for the TStream Engine package.
"""

from setuptools import setup, find_packages
import os

# Read README for long description
def read_readme():
    readme_path = os.path.join(os.path.dirname(__file__), 'README.md')
    if os.path.exists(readme_path):
        with open(readme_path, 'r', encoding='utf-8') as f:
            return f.read()
    return ''

setup(
    name='tstream-engine',
    version='1.0.0',
    description='Transactional stream processing engine: versioned state, epoch transactions, online learning, WAL recovery',
    long_description=read_readme(),
    long_description_content_type='text/markdown',
    author='Thales MMS',
    author_email='',
    url='https://github.com/ThalesMMS/TStream-Engine',
    license='MIT',

    packages=find_packages(exclude=['tests', 'examples', 'examples.*']),
    include_package_data=True,

    python_requires='>=3.9',

    install_requires=[
        'numpy>=1.20.0',
        'crc32c>=2.3',         # WAL and checkpoint checksums
        'flask>=2.0.0',        # For the inference API
        'flask-cors>=3.0.0',   # For CORS support
    ],

    extras_require={
        'dev': [
            'pytest>=7.0.0',
            'pytest-cov>=3.0.0',
            'black>=22.0.0',
            'flake8>=4.0.0',
        ],
    },

    entry_points={
        'console_scripts': [
            # Workload harness
            'tstream-generate=TSTREAM_engine.generate_workload:main',
            'tstream-run=TSTREAM_engine.run_workload:main',
            'tstream-oracle=TSTREAM_engine.oracle_replay:main',
            'tstream-recover-test=TSTREAM_engine.recover_test:main',

            # Inference API
            'tstream-serve=TSTREAM_engine.web_interface:main',
            'tstream=TSTREAM_engine.cli:main',
        ],
    },

    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Intended Audience :: Developers',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Database',
        'Topic :: Software Development :: Libraries :: Python Modules',
    ],

    keywords='stream processing transactions online learning mvcc write-ahead log',

    project_urls={
        'Bug Reports': 'https://github.com/ThalesMMS/TStream-Engine/issues',
        'Source': 'https://github.com/ThalesMMS/TStream-Engine',
        'Documentation': 'https://github.com/ThalesMMS/TStream-Engine#readme',
    },
)
