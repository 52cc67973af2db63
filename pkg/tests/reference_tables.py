"""
Published nine-metric means of eight fusion methods on the FLIR and TNO
test sets, with the normalized evaluation index printed next to them.

Metric order follows ``METRIC_NAMES``: EN, AG, MI, SD, SF, Qabf, SSIM, VIF, SCD.
"""

from src.amfusion.metrics import METRIC_NAMES


def _rows(raw):
    return {method: dict(zip(METRIC_NAMES, values)) for method, values in raw.items()}


FLIR_TABLE = _rows({
    "GTF": (7.4641, 3.3632, 3.1839, 51.3977, 9.4291, 0.3480, 0.7914, 0.4673, 1.0373),
    "MDLatLRR": (6.8351, 3.7318, 2.7263, 31.9031, 9.473, 0.4707, 0.9672, 0.5906, 1.411),
    "STDFusionNet": (7.1080, 5.3042, 3.8334, 46.9905, 15.9198, 0.4066, 0.7367, 0.596, 1.3588),
    "U2Fusion": (7.2324, 6.1577, 2.6577, 41.4372, 14.9383, 0.5145, 0.9941, 0.5584, 1.6513),
    "FusionGAN": (7.0167, 3.2046, 2.6836, 37.4861, 8.1258, 0.2536, 0.5951, 0.3638, 1.1815),
    "Densefuse": (6.7865, 3.3599, 2.7839, 31.0294, 8.4774, 0.3801, 0.9569, 0.5446, 1.3938),
    "DIDfuse": (7.3441, 5.5742, 2.8822, 50.9818, 14.2743, 0.4713, 0.9166, 0.5602, 1.7719),
    "Our": (7.3841, 5.8207, 2.8520, 51.5468, 14.8068, 0.4732, 0.9745, 0.5906, 1.6892),
})

FLIR_INDEX = {
    "GTF": 6.8079,
    "MDLatLRR": 7.1220,
    "STDFusionNet": 8.0235,
    "U2Fusion": 8.2730,
    "FusionGAN": 5.7668,
    "Densefuse": 6.7175,
    "DIDfuse": 8.3046,
    "Our": 8.4532,
}

TNO_TABLE = _rows({
    "GTF": (6.7772, 3.3911, 2.6304, 41.0091, 9.2126, 0.4136, 0.8099, 0.5202, 0.9888),
    "MDLatLRR": (6.3904, 2.7937, 2.1048, 25.5972, 7.3137, 0.4427, 1.0158, 0.6195, 1.6237),
    "STDFusionNet": (6.8700, 4.2318, 3.2912, 39.734, 11.7147, 0.4376, 0.7982, 0.694, 1.4352),
    "U2Fusion": (6.9655, 4.94, 1.1924, 36.5903, 11.6162, 0.4266, 0.9588, 0.6066, 1.7856),
    # SCD is printed as "1.1.3955"
    "FusionGAN": (6.5761, 2.41691, 2.341, 31.1199, 6.2466, 0.2328, 0.6603, 0.4201, 1.3955),
    "Densefuse": (6.3518, 2.5148, 2.216, 24.7829, 6.3794, 0.3506, 1.0127, 0.5727, 1.6056),
    "DIDfuse": (7.0061, 4.2942, 2.3468, 46.8854, 11.2839, 0.4027, 0.8658, 0.6235, 1.7837),
    "Our": (7.3654, 5.8853, 2.3226, 47.7786, 14.6055, 0.3810, 0.8538, 0.6683, 1.6987),
})

# STDFusionNet and U2Fusion are left out: their printed indices (7.8245, 7.7098)
# do not follow from their printed metric rows (7.8635, 7.4901).
TNO_INDEX = {
    "GTF": 6.8195,
    "MDLatLRR": 6.8203,
    "FusionGAN": 5.6566,
    "Densefuse": 6.4318,
    "DIDfuse": 7.8071,
    "Our": 8.3211,
}
