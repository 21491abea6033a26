"""Nonconforming FEM laboratory: Crouzeix-Raviart and Morley discretizations
of second- and fourth-order model problems with companion-operator smoothers,
best-approximation diagnostics, and guaranteed a posteriori error bounds."""

__version__ = "0.1.0"
