from egressmon.tests import run

run()
