# Copyright 2024-2025 egressmon authors, MIT license
import os
import re

from setuptools import find_packages, setup


def find_version(*paths):
    fname = os.path.join(os.path.dirname(__file__), *paths)
    with open(fname) as fp:
        code = fp.read()
    match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", code, re.M)
    if match:
        return match.group(1)
    raise RuntimeError("Unable to find version string.")

version = find_version('egressmon', '__init__.py')

DESCRIPTION = 'Egress reference monitor against covert channels of agents'
LONG_DESCRIPTION = 'Please look at the project site for more information.'

ENTRY_POINTS = {
    'console_scripts': ['egressmon-runtests = egressmon.tests:run',
                        'egressmon-bench = egressmon.core:run_cmdline',
                        'egressmon-scramble = egressmon.core:scramble_cmdline',
                        'egressmon-legit = egressmon.legitimacy:main']}

DEPS = ['numpy>=1.17', 'scipy>=1.4', 'setuptools', 'statsmodels',
        'cryptography>=2.6', 'Pillow>=6.0']

CLASSIFIERS = [
    'Environment :: Console',
    'Intended Audience :: Developers',
    'Intended Audience :: Science/Research',
    'License :: OSI Approved :: MIT License',
    'Operating System :: OS Independent',
    'Programming Language :: Python :: 3',
    'Programming Language :: Python :: 3.8',
    'Programming Language :: Python :: 3.9',
    'Programming Language :: Python :: 3.10',
    'Programming Language :: Python :: 3.11',
    'Topic :: Security'
    ]

setup(name='egressmon',
      version=version,
      description=DESCRIPTION,
      long_description=LONG_DESCRIPTION,
      author='egressmon authors',
      license='MIT',
      packages=find_packages(),
      install_requires=DEPS,
      entry_points=ENTRY_POINTS,
      include_package_data=True,
      zip_safe=False,
      classifiers=CLASSIFIERS
      )
