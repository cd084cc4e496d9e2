"""Real packet trains over the loopback interface.

Starts a receiver agent in this process, then measures one "path" at a few
rates. On an idle host the output rate tracks the input rate, so every
probe should succeed.
"""

from pabest.probing import ProbeConfig
from pabest.udp import ProbeReceiver, UdpProber

cfg = ProbeConfig(n_trains=3, train_length=25, packet_size=1000, epsilon=5.0)
with ProbeReceiver("127.0.0.1", 0) as recv:
    print(f"receiver on {recv.address[0]}:{recv.address[1]}")
    prober = UdpProber({"loop": recv.address}, cfg)
    try:
        for rate in (5, 10, 50):
            m = prober.measure("loop", rate)
            rates = ", ".join(f"{r:.2f}" for r in m.output_rates)
            print(f"{rate:4d} Mbps -> output [{rates}] z={m.z} ({m.bytes_sent} bytes)")
    finally:
        prober.close()
