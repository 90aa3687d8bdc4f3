"""Noiseless line scan: centre 12 MHz, FWHM 28.5 MHz, amplitude 4000, offset 150."""
x0, fwhm, amp, off = 12.0, 28.5, 4000.0, 150.0
with open("lorentzian_noiseless.csv", "w") as f:
    f.write("detuning_mhz,counts\n")
    for i in range(161):
        x = -200.0 + 2.5 * i
        h = 0.5 * fwhm
        f.write(f"{x!r},{off + amp * h * h / ((x - x0) ** 2 + h * h)!r}\n")
