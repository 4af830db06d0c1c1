"""Unit conversions between the SI values used internally and traffic units."""

KMH = 1000.0 / 3600.0  # m/s per km/h
PER_KM = 1.0e-3  # veh/m per veh/km
PER_HOUR = 1.0 / 3600.0  # veh/s per veh/h


def kmh_to_ms(v):
    return v * KMH


def ms_to_kmh(v):
    return v / KMH


def vehkm_to_vehm(rho):
    return rho * PER_KM


def vehm_to_vehkm(rho):
    return rho / PER_KM


def vehh_to_vehs(q):
    return q * PER_HOUR


def vehs_to_vehh(q):
    return q / PER_HOUR
