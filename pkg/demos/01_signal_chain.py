"""
From oil temperature to ADC code and back
=========================================

Walk a temperature through the PT100, the bridge, the op-amp stage and the
10-bit converter, then invert the code with a calibration table.
"""

import numpy as np

from dtrms.calibration import default_table
from dtrms.signal_chain import Chain, adc_sample, amplify, bridge_output, rtd_resistance

chain = Chain()

# one temperature, stage by stage
t = 100.0
r = rtd_resistance(chain.rtd, t)
vb = bridge_output(chain.bridge, r)
va = amplify(chain.amp, vb)
code = adc_sample(chain.adc, va)
print(f"{t} C -> {r:.4f} ohm -> bridge {vb:.6f} V -> amp {va:.5f} V -> code {code}")

# the default gain and offset keep -40..120 C inside the 0-5 V window
print(f"window: {chain.volts(-40):.3f} V .. {chain.volts(120):.3f} V")

###############################################################################
# Invert with the piecewise-linear table built from a 10 C sweep and look at
# the worst-case recovery error over a 0.1 C grid.

table = default_table(chain)
temps = np.round(np.arange(-400, 1201) / 10.0, 1)
err = np.array([table.temperature(chain.code(x)) - x for x in temps])
print(f"code {code} reads back as {table.temperature(code):.2f} C")
print(f"recovery error over {len(temps)} points: max |e| = {np.abs(err).max():.3f} C, "
      f"one code = {160 / (chain.code(120) - chain.code(-40)):.3f} C")
