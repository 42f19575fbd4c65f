"""gridloop: software-in-the-loop co-simulation of ICT networks and power grids.

The package is split into:

* ``gridloop.kernel``  - stepped co-simulation kernel and its framed wire protocol
* ``gridloop.netsim``  - discrete-event network simulator with three QoS areas
* ``gridloop.addressing`` - the 10.64.0.0/10 subnet plan
* ``gridloop.vif``     - the vif / vif-sim packet tunnel bridge
* ``gridloop.apps``    - process supervision and the bundled test applications
* ``gridloop.grid``    - a toy radial power-grid stand-in
* ``gridloop.bench``   - scenario runner, measurements and CLI

Nothing heavy is imported here: the vif and test-app processes import this
package and must start quickly.
"""

__version__ = "0.1.0"
