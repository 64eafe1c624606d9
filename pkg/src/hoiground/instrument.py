"""Forward-pass counters used by the efficiency benchmark.

The counts are exact by construction: the functions doing the work bump them,
the benchmark only reads them. Single global instance; the benchmark harness
is single-threaded by contract.
"""

from dataclasses import dataclass


@dataclass
class PassCounters:
    grounding_passes: int = 0   # full patch-similarity computations (one per image on the shared path)
    decoder_forwards: int = 0   # single-query cross-attention decodes
    baseline_passes: int = 0    # full per-class-query decoder passes (union-crop baseline unit)

    def reset(self) -> None:
        self.grounding_passes = 0
        self.decoder_forwards = 0
        self.baseline_passes = 0

    def snapshot(self) -> dict[str, int]:
        return {
            "grounding_passes": self.grounding_passes,
            "decoder_forwards": self.decoder_forwards,
            "baseline_passes": self.baseline_passes,
        }


COUNTERS = PassCounters()
