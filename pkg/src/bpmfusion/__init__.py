"""BPM-Fusion: bi-pyramid multimodal fusion classifier for sMRI + fMRI."""
