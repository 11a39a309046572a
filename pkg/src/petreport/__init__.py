"""Whole-body PET/CT report generation at desk scale.

Subsystems: volumetric preprocessing (volumes), a synthetic phantom
corpus (phantom, grammar, reports), a dual-stream encoder with a latent
token resampler feeding a LoRA-adapted decoder (encoder, decoder, lora,
prompt, training, generation), and an evaluation harness covering NLG
overlap metrics plus region-level clinical-efficacy scores (nlg,
extraction, scoring).
"""

__version__ = "0.1.0"
